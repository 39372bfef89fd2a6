use serde::{Deserialize, Serialize};

use super::reward::returns;
use crate::agents::{AgentTrace, Rollout};
use crate::diffcomp::{softmax_slice, Tape, Var};
use crate::error::{Error, Result};
use crate::evidential::{evidential_loss, evidential_loss_var};
use crate::synthenv::Episode;
use crate::timeline::{boundary_distance, rel_loc_class, tiou, Interval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub evi: f64,
    pub iou: f64,
    pub dist: f64,
    pub loc: f64,
    pub policy: f64,
    pub value: f64,
    pub trust: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { evi: 1.0, iou: 1.0, dist: 1.0, loc: 1.0, policy: 1.0, value: 1.0, trust: 1.0 }
    }
}

/// Weighted loss components of one agent on one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub evi: f64,
    pub iou: f64,
    pub dist: f64,
    pub loc: f64,
    pub policy: f64,
    pub value: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_parts(evi: f64, iou: f64, dist: f64, loc: f64, policy: f64, value: f64) -> Self {
        LossBreakdown { evi, iou, dist, loc, policy, value, total: evi + iou + dist + loc + policy + value }
    }

    pub fn add(&self, o: &LossBreakdown) -> LossBreakdown {
        LossBreakdown::from_parts(
            self.evi + o.evi,
            self.iou + o.iou,
            self.dist + o.dist,
            self.loc + o.loc,
            self.policy + o.policy,
            self.value + o.value,
        )
    }

    pub fn scale(&self, c: f64) -> LossBreakdown {
        LossBreakdown::from_parts(self.evi * c, self.iou * c, self.dist * c, self.loc * c, self.policy * c, self.value * c)
    }
}

/// Supervision targets of one step, computed from the observed region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTargets {
    pub iou: f64,
    pub dist: [f64; 2],
    pub class: usize,
}

pub fn step_targets(region: Interval, gt: Interval, f0: f64) -> StepTargets {
    StepTargets {
        iou: tiou(region, gt),
        dist: [boundary_distance(region.start, gt.start), boundary_distance(region.end, gt.end)],
        class: rel_loc_class(region, gt, f0).joint_index(),
    }
}

/// `(policy, value)` losses of a trace whose rewards are filled in.
///
/// The advantage `R_t - s_t` is a constant for the policy term.
pub fn policy_value_loss(trace: &AgentTrace, gamma: f64) -> (f64, f64) {
    let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward).collect();
    let r = returns(&rewards, gamma);
    let n = trace.steps.len().max(1) as f64;
    let mut policy = 0.0;
    let mut value = 0.0;
    for (s, ret) in trace.steps.iter().zip(&r) {
        let adv = ret - s.value;
        policy -= (s.log_probs[0] + s.log_probs[1]) * adv;
        value += adv * adv;
    }
    (policy, value / n)
}

/// `(iou, dist, loc)` supervised losses; needs ground truth.
pub fn auxiliary_losses(trace: &AgentTrace, ep: &Episode, f0: f64) -> Result<(f64, f64, f64)> {
    let gt = ep.gt.ok_or_else(|| Error::MissingGroundTruth(ep.id.clone()))?;
    let n = trace.steps.len().max(1) as f64;
    let (mut iou, mut dist, mut loc) = (0.0, 0.0, 0.0);
    for s in &trace.steps {
        let tg = step_targets(s.region, gt, f0);
        iou += (s.p_iou - tg.iou).powi(2);
        dist += (s.p_dist[0] - tg.dist[0]).powi(2) + (s.p_dist[1] - tg.dist[1]).powi(2);
        loc -= softmax_slice(&s.p_loc)[tg.class].ln();
    }
    Ok((iou / n, dist / (2.0 * n), loc / n))
}

pub fn evidence_loss(trace: &AgentTrace, ep: &Episode, f0: f64) -> Result<f64> {
    let gt = ep.gt.ok_or_else(|| Error::MissingGroundTruth(ep.id.clone()))?;
    let n = trace.steps.len().max(1) as f64;
    Ok(trace
        .steps
        .iter()
        .map(|s| evidential_loss(&s.evidence, step_targets(s.region, gt, f0).class))
        .sum::<f64>()
        / n)
}

/// All six weighted terms for one agent. Out-of-scope episodes contribute
/// nothing, since every term needs a ground-truth moment.
pub fn agent_loss(trace: &AgentTrace, ep: &Episode, f0: f64, gamma: f64, w: &LossWeights) -> Result<LossBreakdown> {
    if ep.is_oos() {
        return Ok(LossBreakdown::default());
    }
    let (policy, value) = policy_value_loss(trace, gamma);
    let (iou, dist, loc) = auxiliary_losses(trace, ep, f0)?;
    let evi = evidence_loss(trace, ep, f0)?;
    Ok(LossBreakdown::from_parts(
        w.evi * evi,
        w.iou * iou,
        w.dist * dist,
        w.loc * loc,
        w.policy * policy,
        w.value * value,
    ))
}

/// Differentiable version of [`agent_loss`] built from a rollout's tape nodes.
/// Returns `None` for out-of-scope episodes.
pub fn agent_loss_on_tape(
    tape: &mut Tape,
    rollout: &Rollout,
    ep: &Episode,
    f0: f64,
    gamma: f64,
    w: &LossWeights,
) -> Result<Option<(Var, LossBreakdown)>> {
    let Some(gt) = ep.gt else { return Ok(None) };
    let trace = &rollout.trace;
    let n = trace.steps.len().max(1) as f64;
    let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward).collect();
    let rets = returns(&rewards, gamma);

    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut evi_terms = Vec::new();
    let mut iou_terms = Vec::new();
    let mut dist_terms = Vec::new();
    let mut loc_terms = Vec::new();
    for ((s, v), ret) in trace.steps.iter().zip(&rollout.vars).zip(&rets) {
        let tg = step_targets(s.region, gt, f0);
        let adv = ret - s.value;
        let ls = tape.pick(v.log_probs[0], s.actions[0]);
        let le = tape.pick(v.log_probs[1], s.actions[1]);
        let lp = tape.add(ls, le);
        policy_terms.push(tape.scale(lp, -adv));

        let err = tape.offset(v.value, -ret);
        value_terms.push(tape.square(err));

        evi_terms.push(evidential_loss_var(tape, v.evidence, tg.class));

        let e = tape.offset(v.iou, -tg.iou);
        iou_terms.push(tape.square(e));

        let target = tape.constant(tg.dist.to_vec());
        let e = tape.sub(v.dist, target);
        let sq = tape.square(e);
        dist_terms.push(tape.sum(sq));

        let lsm = tape.log_softmax(v.loc);
        let picked = tape.pick(lsm, tg.class);
        loc_terms.push(tape.scale(picked, -1.0));
    }
    let mut parts = Vec::with_capacity(6);
    let mut values = [0.0; 6];
    let groups = [
        (evi_terms, w.evi / n),
        (iou_terms, w.iou / n),
        (dist_terms, w.dist / (2.0 * n)),
        (loc_terms, w.loc / n),
        (policy_terms, w.policy),
        (value_terms, w.value / n),
    ];
    for (k, (terms, c)) in groups.into_iter().enumerate() {
        let s = tape.add_all(&terms);
        let s = tape.scale(s, c);
        values[k] = tape.scalar(s);
        parts.push(s);
    }
    let total = tape.add_all(&parts);
    let [evi, iou, dist, loc, policy, value] = values;
    Ok(Some((total, LossBreakdown::from_parts(evi, iou, dist, loc, policy, value))))
}
