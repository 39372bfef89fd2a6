use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParamId, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Fully connected layer `activation(W x + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), &[out_dim, in_dim], in_dim, rng)?;
        let b = store.add_uniform(format!("{name}.b"), &[out_dim], in_dim, rng)?;
        Ok(Dense { w, b, activation, in_dim, out_dim })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Var {
        let pre = tape.linear(store, self.w, Some(self.b), x);
        self.activation.apply(tape, pre)
    }
}

/// Value-level dense layer with explicit shape checking.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    let (m, n) = weights.dims2().ok_or_else(|| Error::Shape {
        op: "dense_forward",
        expected: vec![0, input.len()],
        actual: weights.shape().to_vec(),
    })?;
    if n != input.len() || bias.len() != m {
        return Err(Error::Shape {
            op: "dense_forward",
            expected: vec![m, input.len()],
            actual: vec![bias.len(), n],
        });
    }
    let mut store = ParameterStore::new();
    let w = store.add("w", weights.clone())?;
    let b = store.add("b", bias.clone())?;
    let layer = Dense { w, b, activation, in_dim: n, out_dim: m };
    let mut tape = Tape::new();
    let x = tape.constant(input.values().to_vec());
    let y = layer.forward(&mut tape, &store, x);
    Ok(Tensor::vector(tape.value(y).to_vec()))
}

/// Gated recurrent cell.
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gru {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (i, h) = (input_dim, hidden_dim);
        let mut gate = |g: &str, store: &mut ParameterStore| -> Result<(ParamId, ParamId, ParamId)> {
            Ok((
                store.add_uniform(format!("{name}.w{g}"), &[h, i], i, rng)?,
                store.add_uniform(format!("{name}.u{g}"), &[h, h], h, rng)?,
                store.add_uniform(format!("{name}.b{g}"), &[h], h, rng)?,
            ))
        };
        let (wz, uz, bz) = gate("z", store)?;
        let (wr, ur, br) = gate("r", store)?;
        let (wn, un, bn) = gate("n", store)?;
        Ok(Gru { wz, uz, bz, wr, ur, br, wn, un, bn, input_dim, hidden_dim })
    }

    pub fn zero_state(&self, tape: &mut Tape) -> Var {
        tape.constant(vec![0.0; self.hidden_dim])
    }

    pub fn step(&self, tape: &mut Tape, store: &ParameterStore, h: Var, x: Var) -> Var {
        let zx = tape.linear(store, self.wz, Some(self.bz), x);
        let zh = tape.linear(store, self.uz, None, h);
        let z = tape.add(zx, zh);
        let z = tape.sigmoid(z);

        let rx = tape.linear(store, self.wr, Some(self.br), x);
        let rh = tape.linear(store, self.ur, None, h);
        let r = tape.add(rx, rh);
        let r = tape.sigmoid(r);

        let nx = tape.linear(store, self.wn, Some(self.bn), x);
        let rh = tape.mul(r, h);
        let nh = tape.linear(store, self.un, None, rh);
        let n = tape.add(nx, nh);
        let n = tape.tanh(n);

        let diff = tape.sub(h, n);
        let keep = tape.mul(z, diff);
        tape.add(n, keep)
    }

    /// Runs the cell over `xs` from a zero state and returns the last hidden state.
    pub fn run(&self, tape: &mut Tape, store: &ParameterStore, xs: &[Var]) -> Var {
        let mut h = self.zero_state(tape);
        for &x in xs {
            h = self.step(tape, store, h, x);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub hidden: Tensor,
}

impl GruState {
    pub fn zeros(hidden_dim: usize) -> Self {
        GruState { hidden: Tensor::zeros(&[hidden_dim]) }
    }
}

/// One value-level recurrent update.
pub fn gru_step(state: &GruState, input: &Tensor, gru: &Gru, store: &ParameterStore) -> Result<GruState> {
    if state.hidden.len() != gru.hidden_dim || input.len() != gru.input_dim {
        return Err(Error::Shape {
            op: "gru_step",
            expected: vec![gru.hidden_dim, gru.input_dim],
            actual: vec![state.hidden.len(), input.len()],
        });
    }
    let mut tape = Tape::new();
    let h = tape.constant(state.hidden.values().to_vec());
    let x = tape.constant(input.values().to_vec());
    let next = gru.step(&mut tape, store, h, x);
    Ok(GruState { hidden: Tensor::vector(tape.value(next).to_vec()) })
}
