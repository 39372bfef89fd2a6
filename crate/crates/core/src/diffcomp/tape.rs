//! Vector-valued reverse-mode tape.
//!
//! Nodes hold flat `f64` vectors. Matrix parameters never get copied onto the
//! tape: [`Tape::linear`] reads the weight straight out of the
//! [`ParameterStore`] in both passes, which keeps per-step cost close to the
//! bare matrix-vector product.
//!
//! ```
//! use marlcc_core::diffcomp::{ParameterStore, Tape, Tensor};
//!
//! let mut store = ParameterStore::new();
//! let w = store.add("w", Tensor::vector(vec![3.0])).unwrap();
//! let mut tape = Tape::new();
//! let x = tape.param(&store, w);
//! let loss = tape.mul(x, x);
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.grad(w)[0], 6.0);
//! ```

use super::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    Linear { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Node gradients left behind by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` did not influence it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar() on a vector of length {}", val.len());
        val[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise op on lengths {} and {}", va.len(), vb.len());
        let value = va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect();
        self.push(value, op)
    }

    /// A constant input; gradients stop here but can still be read back.
    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Const)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(vec![v])
    }

    /// Copies a parameter onto the tape as a flat vector.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.push(store.value(id).values().to_vec(), Op::Param(id))
    }

    /// Value-only copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    /// `W x + b` with `W` an `[m, n]` parameter and `b` an `[m]` parameter.
    pub fn linear(&mut self, store: &ParameterStore, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = store.value(w);
        let (m, n) = wt.dims2().expect("linear weight must be rank 2");
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.len(), n, "linear input length {} vs weight cols {}", xv.len(), n);
        let wv = wt.values();
        let mut out = match b {
            Some(b) => {
                let bv = store.value(b).values();
                assert_eq!(bv.len(), m, "bias length {} vs rows {}", bv.len(), m);
                bv.to_vec()
            }
            None => vec![0.0; m],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * n..(i + 1) * n];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Linear { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    /// `x + c` elementwise.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::Offset(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Ln(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|p| self.nodes[p.0].value.len()).sum());
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[x.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { x, start })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        self.push(vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of several same-length nodes.
    pub fn add_all(&mut self, xs: &[Var]) -> Var {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = xv.iter().map(|v| v - lse).collect();
        self.push(value, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = self.nodes[x.0].value[index];
        self.push(vec![v], Op::Pick(x, index))
    }

    /// Backpropagates from a scalar loss, accumulating into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<Gradients> {
        self.backward_with(&[(loss, vec![1.0])], store)
    }

    /// Backpropagates from arbitrary upstream gradients at several nodes.
    pub fn backward_seeded(
        &self,
        loss: Option<Var>,
        seeds: &[(Var, Vec<f64>)],
        store: &mut ParameterStore,
    ) -> Result<Gradients> {
        let mut all = Vec::with_capacity(seeds.len() + 1);
        if let Some(l) = loss {
            all.push((l, vec![1.0]));
        }
        all.extend(seeds.iter().cloned());
        self.backward_with(&all, store)
    }

    fn backward_with(&self, seeds: &[(Var, Vec<f64>)], store: &mut ParameterStore) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (v, g) in seeds {
            let n = self.nodes[v.0].value.len();
            if g.len() != n {
                return Err(Error::NonScalarLoss(n));
            }
            accumulate(&mut grads[v.0], g);
            top = top.max(v.0);
        }

        for idx in (0..=top).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    for (acc, gi) in store.grad_mut(*id).iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Linear { w, b, x } => {
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len();
                    let mut dx = vec![0.0; n];
                    {
                        let wv = store.value(*w).values();
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &wv[i * n..(i + 1) * n];
                            for (d, wij) in dx.iter_mut().zip(row) {
                                *d += gi * wij;
                            }
                        }
                    }
                    let gw = store.grad_mut(*w);
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[i * n..(i + 1) * n];
                        for (acc, xj) in row.iter_mut().zip(xv) {
                            *acc += gi * xj;
                        }
                    }
                    if let Some(b) = b {
                        for (acc, gi) in store.grad_mut(*b).iter_mut().zip(&g) {
                            *acc += gi;
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[a.0], &ga);
                    accumulate(&mut grads[b.0], &gb);
                }
                Op::Scale(x, c) => {
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Offset(x) => accumulate(&mut grads[x.0], &g),
                Op::Sigmoid(x) => {
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(g, s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Tanh(x) => {
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(g, t)| g * (1.0 - t * t)).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Softplus(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| g * sigmoid(*v)).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Ln(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| g / v).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut grads[p.0], &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.nodes[x.0].value.len();
                    let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                    for (acc, gi) in slot[*start..*start + g.len()].iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.len();
                    accumulate(&mut grads[x.0], &vec![g[0]; n]);
                }
                Op::LogSoftmax(x) => {
                    // d/dx_j = g_j - softmax_j * sum(g)
                    let total: f64 = g.iter().sum();
                    let gx: Vec<f64> = g.iter().zip(&node.value).map(|(g, ls)| g - ls.exp() * total).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
                Op::Pick(x, i) => {
                    let n = self.nodes[x.0].value.len();
                    let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                    slot[*i] += g[0];
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}
