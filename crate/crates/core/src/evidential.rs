//! Locational evidence over the 16 relative-location classes.
//!
//! Evidence `e_j >= 0` parameterizes a Dirichlet with `alpha_j = e_j + 1`.
//! The Dirichlet strength is `S = sum(alpha)` and the uncertainty is
//! `u = C / S`, which is exactly 1 when no evidence has been collected.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diffcomp::{Activation, Dense, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::timeline::NUM_LOC_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub e: Vec<f64>,
    pub alpha: Vec<f64>,
    pub strength: f64,
    pub uncertainty: f64,
}

impl Evidence {
    pub fn new(e: Vec<f64>) -> Self {
        let alpha: Vec<f64> = e.iter().map(|v| v + 1.0).collect();
        let strength: f64 = alpha.iter().sum();
        let uncertainty = e.len() as f64 / strength;
        Evidence { e, alpha, strength, uncertainty }
    }

    pub fn num_classes(&self) -> usize {
        self.e.len()
    }

    /// Expected class probabilities `alpha / S`.
    pub fn expected_probs(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.strength).collect()
    }
}

/// `FC_evi` followed by Softplus.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceHead {
    pub dense: Dense,
}

impl EvidenceHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParameterStore, name: &str, in_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(EvidenceHead {
            dense: Dense::new(store, name, in_dim, NUM_LOC_CLASSES, Activation::Softplus, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, state: Var) -> Var {
        self.dense.forward(tape, store, state)
    }
}

/// Runs the head and packages its output as [`Evidence`].
pub fn evidence_head(tape: &mut Tape, store: &ParameterStore, head: &EvidenceHead, state: Var) -> (Var, Evidence) {
    let e = head.forward(tape, store, state);
    let ev = Evidence::new(tape.value(e).to_vec());
    (e, ev)
}

/// `log S - log alpha_true` for a one-hot target.
pub fn evidential_loss(ev: &Evidence, true_class: usize) -> f64 {
    ev.strength.ln() - ev.alpha[true_class].ln()
}

/// Differentiable form of [`evidential_loss`] on a raw evidence node.
pub fn evidential_loss_var(tape: &mut Tape, evidence: Var, true_class: usize) -> Var {
    let c = tape.value(evidence).len() as f64;
    let total = tape.sum(evidence);
    let strength = tape.offset(total, c);
    let log_s = tape.ln(strength);
    let e_true = tape.pick(evidence, true_class);
    let alpha_true = tape.offset(e_true, 1.0);
    let log_a = tape.ln(alpha_true);
    tape.sub(log_s, log_a)
}

/// Log-density of a Dirichlet at `p`.
///
/// Points on the simplex boundary where the density vanishes return
/// `f64::NEG_INFINITY`. Points off the simplex are rejected.
pub fn dirichlet_log_density(p: &[f64], alpha: &[f64]) -> Result<f64> {
    if p.len() != alpha.len() {
        return Err(Error::Shape { op: "dirichlet_log_density", expected: vec![alpha.len()], actual: vec![p.len()] });
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < -1e-9) {
        return Err(Error::OffSimplex);
    }
    let a0: f64 = alpha.iter().sum();
    let mut log_d = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    for (&pj, &aj) in p.iter().zip(alpha) {
        let power = aj - 1.0;
        if power == 0.0 {
            continue;
        }
        if pj <= 0.0 {
            return Ok(if power > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY });
        }
        log_d += power * pj.ln();
    }
    Ok(log_d)
}
