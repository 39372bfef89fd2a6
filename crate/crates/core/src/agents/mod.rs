//! The three localization agents.
//!
//! ESRL scans a fixed window left to right and may ADD either output boundary
//! inside the current window. EMover and EDark shift both boundaries of a
//! current interval; EDark observes the frames outside that interval.

mod geometry;
mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use geometry::{apply_add, esrl_move, mover_move, scanner_window, EsrlAction, MoverAction, Move};
pub use trace::{read_traces, write_traces, AgentTrace, StepRecord, TraceRecord, TraceStep};

use crate::diffcomp::{argmax, sample_slice, Activation, Dense, Gru, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::evidential::{Evidence, EvidenceHead};
use crate::synthenv::{Episode, FeatureMode, ObservationConfig, ObservationNet};
use crate::timeline::{Interval, NUM_LOC_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "esrl")]
    Esrl,
    #[serde(rename = "emover")]
    EMover,
    #[serde(rename = "edark")]
    EDark,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Esrl, AgentKind::EMover, AgentKind::EDark];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Esrl => "esrl",
            AgentKind::EMover => "emover",
            AgentKind::EDark => "edark",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn mode(self) -> FeatureMode {
        match self {
            AgentKind::EDark => FeatureMode::Excluded,
            _ => FeatureMode::Included,
        }
    }

    pub fn num_actions(self) -> usize {
        match self {
            AgentKind::Esrl => EsrlAction::COUNT,
            _ => MoverAction::COUNT,
        }
    }

    /// Index of the HOLD action in this kind's action table.
    pub fn hold_index(self) -> usize {
        match self {
            AgentKind::Esrl => EsrlAction::Hold.index(),
            _ => MoverAction::Hold.index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub steps: usize,
    pub step_size: f64,
    pub window: f64,
    pub offsets: Vec<f64>,
    pub shift_small: f64,
    pub shift_large: f64,
    pub policy_hidden: usize,
    pub observation: ObservationConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            steps: 10,
            step_size: 0.1,
            window: 0.12,
            offsets: vec![0.0, 0.02, 0.04, 0.08, 0.1, 0.12],
            shift_small: 0.05,
            shift_large: 0.16,
            policy_hidden: 64,
            observation: ObservationConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("agent steps must be positive".into()));
        }
        if self.offsets.len() != EsrlAction::COUNT - 1 {
            return Err(Error::Config(format!("expected {} ADD offsets, got {}", EsrlAction::COUNT - 1, self.offsets.len())));
        }
        if self.offsets.iter().any(|&o| !(0.0..=self.window).contains(&o)) {
            return Err(Error::Config("ADD offsets must lie within [0, window]".into()));
        }
        if !(self.window > 0.0 && self.step_size > 0.0 && self.shift_small >= 0.0 && self.shift_large >= 0.0) {
            return Err(Error::Config("window and step size must be positive, shifts non-negative".into()));
        }
        Ok(())
    }
}

/// All learnable blocks of one agent. Nothing is shared between agents.
#[derive(Debug, Clone, Copy)]
pub struct AgentNet {
    pub kind: AgentKind,
    pub obs: ObservationNet,
    pub policy: Gru,
    pub pi_start: Dense,
    pub pi_end: Dense,
    pub value: Dense,
    pub evidence: EvidenceHead,
    pub iou: Dense,
    pub dist: Dense,
    pub loc: Dense,
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        kind: AgentKind,
        d_v: usize,
        d_q: usize,
        cfg: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = kind.name();
        let obs = ObservationNet::new(store, &format!("{p}.obs"), d_v, d_q, &cfg.observation, rng)?;
        let o = cfg.observation.obs_dim;
        let h = cfg.policy_hidden;
        let a = kind.num_actions();
        Ok(AgentNet {
            kind,
            obs,
            policy: Gru::new(store, &format!("{p}.policy_gru"), o, h, rng)?,
            pi_start: Dense::new(store, &format!("{p}.pi_start"), h, a, Activation::Identity, rng)?,
            pi_end: Dense::new(store, &format!("{p}.pi_end"), h, a, Activation::Identity, rng)?,
            value: Dense::new(store, &format!("{p}.value"), h, 1, Activation::Identity, rng)?,
            evidence: EvidenceHead::new(store, &format!("{p}.evidence"), o, rng)?,
            iou: Dense::new(store, &format!("{p}.iou"), o, 1, Activation::Sigmoid, rng)?,
            dist: Dense::new(store, &format!("{p}.dist"), o, 2, Activation::Sigmoid, rng)?,
            loc: Dense::new(store, &format!("{p}.loc"), o, NUM_LOC_CLASSES, Activation::Identity, rng)?,
        })
    }
}

/// How actions are chosen during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum ActionPicker<'a> {
    /// Draw from the policy (training).
    Sample,
    /// Most probable action, ties to the lowest index (evaluation).
    Greedy,
    /// Uniform over the action table, ignoring the policy (random baseline).
    Uniform,
    /// Fixed action indices per step.
    Scripted(&'a [[usize; 2]]),
}

impl ActionPicker<'_> {
    fn pick<R: Rng + ?Sized>(&self, t: usize, side: usize, log_probs: &[f64], rng: &mut R) -> usize {
        match self {
            ActionPicker::Sample => {
                let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
                sample_slice(&probs, rng).expect("log-softmax output is normalized")
            }
            ActionPicker::Greedy => argmax(log_probs),
            ActionPicker::Uniform => rng.random_range(0..log_probs.len()),
            ActionPicker::Scripted(script) => script[t][side],
        }
    }
}

/// Tape handles produced at one step, for building losses.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub obs: Var,
    pub log_probs: [Var; 2],
    pub value: Var,
    pub evidence: Var,
    pub iou: Var,
    pub dist: Var,
    pub loc: Var,
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: AgentTrace,
    pub vars: Vec<StepVars>,
}

/// Runs one episode on `tape`, keeping every intermediate node so losses can
/// be back-propagated afterwards.
pub fn rollout<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParameterStore,
    net: &AgentNet,
    cfg: &AgentConfig,
    ep: &Episode,
    picker: ActionPicker<'_>,
    rng: &mut R,
) -> Rollout {
    let kind = net.kind;
    let ctx = net.obs.encode_episode(tape, store, ep);
    let min_gap = 1.0 / ep.n_frames() as f64;
    let mut h = net.policy.zero_state(tape);
    let mut current = Interval::FULL;
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut vars = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let region = match kind {
            AgentKind::Esrl => scanner_window(t, cfg.step_size, cfg.window),
            _ => current,
        };
        let o = net.obs.observe(tape, store, &ctx, region, kind.mode());
        h = net.policy.step(tape, store, h, o);

        let mut log_probs = [o; 2];
        let mut actions = [0; 2];
        let mut lp = [0.0; 2];
        for (side, head) in [net.pi_start, net.pi_end].iter().enumerate() {
            let logits = head.forward(tape, store, h);
            let l = tape.log_softmax(logits);
            let a = picker.pick(t, side, tape.value(l), rng);
            log_probs[side] = l;
            actions[side] = a;
            lp[side] = tape.value(l)[a];
        }
        let value = net.value.forward(tape, store, h);
        let evidence = net.evidence.forward(tape, store, o);
        let iou = net.iou.forward(tape, store, o);
        let dist = net.dist.forward(tape, store, o);
        let loc = net.loc.forward(tape, store, o);

        let mv = match kind {
            AgentKind::Esrl => esrl_move(
                current,
                region,
                [EsrlAction::from_index(actions[0]), EsrlAction::from_index(actions[1])],
                &cfg.offsets,
            ),
            _ => mover_move(
                current,
                [MoverAction::from_index(actions[0]), MoverAction::from_index(actions[1])],
                cfg.shift_small,
                cfg.shift_large,
                min_gap,
            ),
        };
        current = mv.output;
        let dv = tape.value(dist);
        steps.push(StepRecord {
            t,
            region,
            output: mv.output,
            evidence: Evidence::new(tape.value(evidence).to_vec()),
            p_iou: tape.value(iou)[0],
            p_dist: [dv[0], dv[1]],
            p_loc: tape.value(loc).to_vec(),
            actions,
            proposed: mv.proposed,
            valid: mv.valid,
            log_probs: lp,
            value: tape.value(value)[0],
            reward: 0.0,
        });
        vars.push(StepVars { obs: o, log_probs, value, evidence, iou, dist, loc });
    }
    Rollout {
        trace: AgentTrace { kind, episode_id: ep.id.clone(), steps, final_output: current },
        vars,
    }
}

/// Value-only rollout.
pub fn run_episode<R: Rng + ?Sized>(
    store: &ParameterStore,
    net: &AgentNet,
    cfg: &AgentConfig,
    ep: &Episode,
    picker: ActionPicker<'_>,
    rng: &mut R,
) -> AgentTrace {
    let mut tape = Tape::new();
    rollout(&mut tape, store, net, cfg, ep, picker, rng).trace
}
