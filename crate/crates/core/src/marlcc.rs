//! Multi-agent layer: trusted-IoU scoring, competition, conflict-based
//! out-of-scope detection, threshold calibration and retrieval ranking.
//!
//! One fusion network scores every agent so the trusted IoU values are
//! comparable across agents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentTrace;
use crate::diffcomp::{argmax, Activation, Dense, Gru, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::Confusion;
use crate::timeline::{eta, tiou, Interval, Verdict, NUM_LOC_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub evi_hidden: usize,
    pub iou_hidden: usize,
    pub loc_hidden: usize,
    pub gru_hidden: usize,
    pub trust_hidden: usize,
    /// Ablation: feed zeros instead of the evidence stream.
    pub zero_evidence: bool,
    /// Let the trust loss reach the agent networks through their outputs.
    pub propagate_to_agents: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            evi_hidden: 16,
            iou_hidden: 8,
            loc_hidden: 8,
            gru_hidden: 32,
            trust_hidden: 32,
            zero_evidence: false,
            propagate_to_agents: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionNet {
    pub ffn_evi: Dense,
    pub ffn_iou: Dense,
    pub ffn_loc: Dense,
    pub gru: Gru,
    pub ffn_tr: Dense,
    pub ffn_out: Dense,
    pub zero_evidence: bool,
}

impl FusionNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParameterStore, prefix: &str, cfg: &FusionConfig, rng: &mut R) -> Result<Self> {
        let ffn_evi = Dense::new(store, &format!("{prefix}.ffn_evi"), NUM_LOC_CLASSES, cfg.evi_hidden, Activation::Tanh, rng)?;
        let ffn_iou = Dense::new(store, &format!("{prefix}.ffn_iou"), 1, cfg.iou_hidden, Activation::Tanh, rng)?;
        let ffn_loc = Dense::new(store, &format!("{prefix}.ffn_loc"), 2, cfg.loc_hidden, Activation::Tanh, rng)?;
        let cat = cfg.evi_hidden + cfg.iou_hidden + cfg.loc_hidden;
        let gru = Gru::new(store, &format!("{prefix}.gru"), cat, cfg.gru_hidden, rng)?;
        let tr_in = cfg.gru_hidden + cfg.loc_hidden;
        let ffn_tr = Dense::new(store, &format!("{prefix}.ffn_tr"), tr_in, cfg.trust_hidden, Activation::Tanh, rng)?;
        let ffn_out = Dense::new(store, &format!("{prefix}.ffn_out"), cfg.trust_hidden, 1, Activation::Sigmoid, rng)?;
        Ok(FusionNet { ffn_evi, ffn_iou, ffn_loc, gru, ffn_tr, ffn_out, zero_evidence: cfg.zero_evidence })
    }
}

/// Per-step streams read off one agent trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    pub evidence_seq: Vec<Vec<f64>>,
    pub p_iou_seq: Vec<f64>,
    pub boundary_seq: Vec<[f64; 2]>,
    pub final_output: Interval,
}

impl FusionInput {
    pub fn from_trace(trace: &AgentTrace) -> Self {
        FusionInput {
            evidence_seq: trace.steps.iter().map(|s| s.evidence.e.clone()).collect(),
            p_iou_seq: trace.steps.iter().map(|s| s.p_iou).collect(),
            boundary_seq: trace.steps.iter().map(|s| [s.region.start, s.region.end]).collect(),
            final_output: trace.final_output,
        }
    }

    fn check(&self) -> Result<usize> {
        let t = self.evidence_seq.len();
        if self.p_iou_seq.len() != t || self.boundary_seq.len() != t {
            return Err(Error::Shape {
                op: "encode_trace",
                expected: vec![t, t, t],
                actual: vec![self.evidence_seq.len(), self.p_iou_seq.len(), self.boundary_seq.len()],
            });
        }
        if let Some(e) = self.evidence_seq.iter().find(|e| e.len() != NUM_LOC_CLASSES) {
            return Err(Error::Shape { op: "encode_trace", expected: vec![NUM_LOC_CLASSES], actual: vec![e.len()] });
        }
        Ok(t)
    }
}

/// Tape nodes for one step of a trace as seen by the fusion network.
#[derive(Debug, Clone, Copy)]
pub struct FusionStep {
    pub evidence: Var,
    pub p_iou: Var,
    pub boundary: Var,
}

impl FusionNet {
    /// Puts an input's streams on the tape as constants.
    pub fn constant_steps(&self, tape: &mut Tape, inp: &FusionInput) -> Vec<FusionStep> {
        (0..inp.evidence_seq.len())
            .map(|t| FusionStep {
                evidence: tape.constant(inp.evidence_seq[t].clone()),
                p_iou: tape.constant(vec![inp.p_iou_seq[t]]),
                boundary: tape.constant(inp.boundary_seq[t].to_vec()),
            })
            .collect()
    }

    /// Last GRU state over the encoded per-step streams.
    ///
    /// Evidence enters as `ln(1 + e)` to keep large evidence from saturating
    /// the encoder.
    pub fn encode(&self, tape: &mut Tape, store: &ParameterStore, steps: &[FusionStep]) -> Var {
        let xs: Vec<Var> = steps
            .iter()
            .map(|s| {
                let ev = if self.zero_evidence {
                    tape.constant(vec![0.0; NUM_LOC_CLASSES])
                } else {
                    let shifted = tape.offset(s.evidence, 1.0);
                    tape.ln(shifted)
                };
                let a = self.ffn_evi.forward(tape, store, ev);
                let b = self.ffn_iou.forward(tape, store, s.p_iou);
                let c = self.ffn_loc.forward(tape, store, s.boundary);
                tape.concat(&[a, b, c])
            })
            .collect();
        self.gru.run(tape, store, &xs)
    }

    /// `U = sigmoid(FFN_Tr(theta ⊕ FFN_loc(final)))`.
    pub fn trust(&self, tape: &mut Tape, store: &ParameterStore, theta: Var, final_output: Var) -> Var {
        let l = self.ffn_loc.forward(tape, store, final_output);
        let cat = tape.concat(&[theta, l]);
        let hidden = self.ffn_tr.forward(tape, store, cat);
        self.ffn_out.forward(tape, store, hidden)
    }

    /// Trusted IoU of one trace.
    pub fn score(&self, tape: &mut Tape, store: &ParameterStore, inp: &FusionInput) -> Var {
        let steps = self.constant_steps(tape, inp);
        let theta = self.encode(tape, store, &steps);
        let fin = tape.constant(vec![inp.final_output.start, inp.final_output.end]);
        self.trust(tape, store, theta, fin)
    }
}

pub fn encode_trace(inp: &FusionInput, net: &FusionNet, store: &ParameterStore) -> Result<Tensor> {
    inp.check()?;
    let mut tape = Tape::new();
    let steps = net.constant_steps(&mut tape, inp);
    let theta = net.encode(&mut tape, store, &steps);
    Ok(Tensor::vector(tape.value(theta).to_vec()))
}

pub fn trusted_iou(theta: &Tensor, final_output: Interval, net: &FusionNet, store: &ParameterStore) -> f64 {
    let mut tape = Tape::new();
    let th = tape.constant(theta.values().to_vec());
    let fin = tape.constant(vec![final_output.start, final_output.end]);
    let u = net.trust(&mut tape, store, th, fin);
    tape.value(u)[0]
}

pub fn score_trace(trace: &AgentTrace, net: &FusionNet, store: &ParameterStore) -> f64 {
    let mut tape = Tape::new();
    let u = net.score(&mut tape, store, &FusionInput::from_trace(trace));
    tape.value(u)[0]
}

/// `(U - tIoU(final, gt))^2`.
pub fn trust_loss(u: f64, final_output: Interval, gt: Option<Interval>) -> Result<f64> {
    let gt = gt.ok_or_else(|| Error::MissingGroundTruth("trust_loss".into()))?;
    Ok((u - tiou(final_output, gt)).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Winner {
    pub index: usize,
    pub final_output: Interval,
    pub u: Vec<f64>,
}

/// Highest score wins; ties go to the lowest index.
pub fn select_by_scores(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("select_winner"));
    }
    Ok(argmax(scores))
}

pub fn select_winner(traces: &[AgentTrace], net: &FusionNet, store: &ParameterStore) -> Result<Winner> {
    let u: Vec<f64> = traces.iter().map(|t| score_trace(t, net, store)).collect();
    let index = select_by_scores(&u)?;
    Ok(Winner { index, final_output: traces[index].final_output, u })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OosDecision {
    pub eta: f64,
    pub h: f64,
    pub verdict: Verdict,
}

/// OOS iff the maximum pairwise conflict strictly exceeds `h`.
pub fn detect_oos(finals: &[Interval], h: f64) -> Result<OosDecision> {
    let eta = eta(finals)?;
    let verdict = if eta > h { Verdict::Oos } else { Verdict::Match };
    Ok(OosDecision { eta, h, verdict })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OosObjective {
    F1,
    Accuracy,
}

impl std::str::FromStr for OosObjective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(OosObjective::F1),
            "accuracy" => Ok(OosObjective::Accuracy),
            other => Err(Error::Config(format!("unknown objective {other:?} (expected f1 or accuracy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub h: f64,
    /// Objective value at `h`, in percent.
    pub score: f64,
    /// Set when every observed conflict is identical and no split exists.
    pub degenerate: bool,
}

/// Chooses `h` among midpoints of the sorted distinct conflicts.
/// `samples` are `(eta, is_oos)`.
pub fn calibrate_threshold(samples: &[(f64, bool)], objective: OosObjective) -> Result<Calibration> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("calibrate_threshold"));
    }
    if samples.iter().all(|s| s.1) || samples.iter().all(|s| !s.1) {
        return Err(Error::SingleClass);
    }
    let mut etas: Vec<f64> = samples.iter().map(|s| s.0).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let evaluate = |h: f64| {
        let pairs: Vec<(Verdict, Verdict)> = samples
            .iter()
            .map(|&(e, oos)| {
                let pred = if e > h { Verdict::Oos } else { Verdict::Match };
                (pred, if oos { Verdict::Oos } else { Verdict::Match })
            })
            .collect();
        let c = Confusion::from_pairs(&pairs);
        match objective {
            OosObjective::F1 => c.f1(),
            OosObjective::Accuracy => c.accuracy(),
        }
    };
    if etas.len() == 1 {
        return Ok(Calibration { h: etas[0], score: evaluate(etas[0]), degenerate: true });
    }
    let mut best = Calibration { h: f64::NAN, score: f64::NEG_INFINITY, degenerate: false };
    for w in etas.windows(2) {
        let h = 0.5 * (w[0] + w[1]);
        let score = evaluate(h);
        if score > best.score {
            best = Calibration { h, score, degenerate: false };
        }
    }
    Ok(best)
}

/// Orders candidates by ascending conflict; equal conflicts keep input order.
pub fn rank_videos(candidates: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut out = candidates.to_vec();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}
