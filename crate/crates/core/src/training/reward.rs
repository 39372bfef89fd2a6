use serde::{Deserialize, Serialize};

use crate::agents::AgentTrace;
use crate::error::{Error, Result};
use crate::timeline::{is_valid, Boundary, Interval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Reward for HOLD.
    pub rho: f64,
    /// Base value of the invalid-move penalty.
    pub beta: f64,
    /// Weight of the post-move distance in `f_dis`.
    pub theta: f64,
    /// Use the literal case assignment, which rewards moving away from the target.
    pub reward_branch_as_printed: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { rho: 0.0, beta: -0.8, theta: 0.4, reward_branch_as_printed: false }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0, 1)", self.theta)));
        }
        Ok(())
    }
}

/// `x + d_t - theta * d_next`.
pub fn f_dis(x: f64, d_t: f64, d_next: f64, theta: f64) -> f64 {
    x + d_t - theta * d_next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardBranch {
    Hold,
    Invalid,
    Closer,
    NotCloser,
}

/// One boundary's move, as needed to score it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMove {
    pub hold: bool,
    pub which: Boundary,
    pub prev: f64,
    /// Where the action asked the boundary to go.
    pub proposed: f64,
    /// Where the boundary ended up.
    pub applied: f64,
    /// The opposite boundary the proposal is validated against.
    pub other: f64,
}

pub fn reward_branch(mv: &BoundaryMove, gt: f64) -> RewardBranch {
    if mv.hold {
        RewardBranch::Hold
    } else if !is_valid(mv.proposed, mv.which, mv.other) {
        RewardBranch::Invalid
    } else if (mv.applied - gt).abs() < (mv.prev - gt).abs() {
        RewardBranch::Closer
    } else {
        RewardBranch::NotCloser
    }
}

pub fn boundary_reward(mv: &BoundaryMove, gt: f64, cfg: &RewardConfig) -> f64 {
    let d_t = (mv.prev - gt).abs();
    let d_next = (mv.applied - gt).abs();
    let positive = f_dis(1.0 - d_next, d_t, d_next, cfg.theta);
    let negative = f_dis(-1.0 - d_next, d_t, d_next, cfg.theta);
    match reward_branch(mv, gt) {
        RewardBranch::Hold => cfg.rho,
        RewardBranch::Invalid => f_dis(cfg.beta, d_t, d_next, cfg.theta),
        RewardBranch::Closer if cfg.reward_branch_as_printed => negative,
        RewardBranch::Closer => positive,
        RewardBranch::NotCloser if cfg.reward_branch_as_printed => positive,
        RewardBranch::NotCloser => negative,
    }
}

pub fn step_reward(start_reward: f64, end_reward: f64) -> f64 {
    start_reward + end_reward
}

/// The two boundary moves made at step `t` of a trace.
pub fn step_moves(trace: &AgentTrace, t: usize) -> [BoundaryMove; 2] {
    let s = &trace.steps[t];
    let prev = if t == 0 { Interval::FULL } else { trace.steps[t - 1].output };
    let hold = trace.kind.hold_index();
    [
        BoundaryMove {
            hold: s.actions[0] == hold,
            which: Boundary::Start,
            prev: prev.start,
            proposed: s.proposed[0],
            applied: s.output.start,
            other: prev.end,
        },
        BoundaryMove {
            hold: s.actions[1] == hold,
            which: Boundary::End,
            prev: prev.end,
            proposed: s.proposed[1],
            applied: s.output.end,
            other: s.output.start,
        },
    ]
}

/// Fills every step's reward from the ground truth.
pub fn assign_rewards(trace: &mut AgentTrace, gt: Interval, cfg: &RewardConfig) {
    for t in 0..trace.steps.len() {
        let [s, e] = step_moves(trace, t);
        trace.steps[t].reward = step_reward(boundary_reward(&s, gt.start, cfg), boundary_reward(&e, gt.end, cfg));
    }
}

/// Discounted returns `R_t = sum_k gamma^(k-t) r_k`.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}
