//! Rewards, losses and the joint training loop over all agents and the
//! fusion network.

mod losses;
mod reward;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use losses::{
    agent_loss, agent_loss_on_tape, auxiliary_losses, evidence_loss, policy_value_loss, step_targets, LossBreakdown,
    LossWeights, StepTargets,
};
pub use reward::{
    assign_rewards, boundary_reward, f_dis, returns, reward_branch, step_moves, step_reward, BoundaryMove, RewardBranch,
    RewardConfig,
};

use crate::agents::{rollout, ActionPicker};
use crate::diffcomp::{argmax, clip_global_norm, Tape};
use crate::error::Result;
use crate::evaluation::run_all_agents;
use crate::io::write_atomic;
use crate::marlcc::{trust_loss, FusionStep};
use crate::model::Model;
use crate::seeding::stream;
use crate::synthenv::Episode;
use crate::timeline::tiou;

/// Losses and winner quality of one training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// Summed over agents.
    pub loss: LossBreakdown,
    /// Weighted, summed over agents.
    pub trust: f64,
    /// tIoU of the highest-trust agent's output.
    pub winner_tiou: f64,
}

/// Rolls out every agent with sampled actions, builds the joint loss and
/// back-propagates it into `model.store`. Parameters are not updated.
pub fn accumulate_episode_grads<R: Rng + ?Sized>(model: &mut Model, ep: &Episode, rng: &mut R) -> Result<Option<EpisodeStats>> {
    let Some(gt) = ep.gt else { return Ok(None) };
    let cfg = &model.config;
    let w = &cfg.training.weights;
    let f0 = cfg.agents.window;
    let mut tape = Tape::new();
    let mut totals = Vec::new();
    let mut loss = LossBreakdown::default();
    let mut us = Vec::new();
    let mut finals = Vec::new();
    let mut trust_terms = Vec::new();
    let mut trust_value = 0.0;
    for net in &model.agents {
        let mut r = rollout(&mut tape, &model.store, net, &cfg.agents, ep, ActionPicker::Sample, rng);
        assign_rewards(&mut r.trace, gt, &cfg.reward);
        let (total, parts) = agent_loss_on_tape(&mut tape, &r, ep, f0, cfg.training.discount, w)?.expect("matched episode");
        totals.push(total);
        loss = loss.add(&parts);

        let fusion = &model.fusion;
        let steps: Vec<FusionStep> = if cfg.fusion.propagate_to_agents {
            r.trace
                .steps
                .iter()
                .zip(&r.vars)
                .map(|(s, v)| FusionStep {
                    evidence: v.evidence,
                    p_iou: v.iou,
                    boundary: tape.constant(vec![s.region.start, s.region.end]),
                })
                .collect()
        } else {
            fusion.constant_steps(&mut tape, &crate::marlcc::FusionInput::from_trace(&r.trace))
        };
        let theta = fusion.encode(&mut tape, &model.store, &steps);
        let fin = tape.constant(vec![r.trace.final_output.start, r.trace.final_output.end]);
        let u = fusion.trust(&mut tape, &model.store, theta, fin);
        let target = tiou(r.trace.final_output, gt);
        let err = tape.offset(u, -target);
        let sq = tape.square(err);
        trust_terms.push(tape.scale(sq, w.trust));
        let u_val = tape.value(u)[0];
        trust_value += w.trust * trust_loss(u_val, r.trace.final_output, Some(gt))?;
        us.push(u_val);
        finals.push(r.trace.final_output);
    }
    totals.extend(trust_terms);
    let objective = tape.add_all(&totals);
    tape.backward(objective, &mut model.store)?;
    Ok(Some(EpisodeStats { loss, trust: trust_value, winner_tiou: tiou(finals[argmax(&us)], gt) }))
}

/// One optimizer step on one episode: gradients, global-norm clip, Adam.
pub fn train_step<R: Rng + ?Sized>(model: &mut Model, ep: &Episode, rng: &mut R) -> Result<Option<EpisodeStats>> {
    let stats = accumulate_episode_grads(model, ep, rng)?;
    if stats.is_some() {
        let opt = model.config.optimizer.clone();
        clip_global_norm(&mut [&mut model.store], opt.clip_norm);
        model.store.adam_update(&opt.adam());
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: Split,
    pub loss: LossBreakdown,
    pub trust: f64,
    pub acc50: f64,
    pub acc70: f64,
}

impl EpochLog {
    pub fn loss_total(&self) -> f64 {
        self.loss.total + self.trust
    }
}

pub const LOG_HEADER: &str =
    "epoch,split,loss_total,loss_evi,loss_iou,loss_dist,loss_loc,loss_policy,loss_value,loss_trust,acc50,acc70";

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in rows {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.split.name(),
            r.loss_total(),
            l.evi,
            l.iou,
            l.dist,
            l.loc,
            l.policy,
            l.value,
            r.trust,
            r.acc50,
            r.acc70
        )
        .expect("write to string");
    }
    out
}

pub fn write_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    write_atomic(path, log_csv(rows).as_bytes())
}

struct Accumulator {
    loss: LossBreakdown,
    trust: f64,
    hits50: usize,
    hits70: usize,
    n: usize,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { loss: LossBreakdown::default(), trust: 0.0, hits50: 0, hits70: 0, n: 0 }
    }

    fn push(&mut self, loss: &LossBreakdown, trust: f64, winner_tiou: f64) {
        self.loss = self.loss.add(loss);
        self.trust += trust;
        self.hits50 += usize::from(winner_tiou > 0.5);
        self.hits70 += usize::from(winner_tiou > 0.7);
        self.n += 1;
    }

    fn finish(&self, epoch: usize, split: Split) -> EpochLog {
        let n = self.n as f64;
        let (acc50, acc70) = if self.n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (100.0 * self.hits50 as f64 / n, 100.0 * self.hits70 as f64 / n)
        };
        let scale = if self.n == 0 { 0.0 } else { 1.0 / n };
        EpochLog { epoch, split, loss: self.loss.scale(scale), trust: self.trust * scale, acc50, acc70 }
    }
}

/// Greedy losses and winner quality on matched validation episodes.
pub fn validation_log(model: &Model, val: &[Episode], limit: usize, epoch: usize) -> Result<EpochLog> {
    let cfg = &model.config;
    let mut acc = Accumulator::new();
    let mut rng = stream(cfg.seed, "val-log");
    for ep in val.iter().filter(|e| !e.is_oos()).take(limit) {
        let gt = ep.gt.expect("matched");
        let mut out = run_all_agents(model, ep, ActionPicker::Greedy, &mut rng);
        let mut loss = LossBreakdown::default();
        let mut trust = 0.0;
        for (tr, u) in out.traces.iter_mut().zip(&out.u) {
            assign_rewards(tr, gt, &cfg.reward);
            loss = loss.add(&agent_loss(tr, ep, cfg.agents.window, cfg.training.discount, &cfg.training.weights)?);
            trust += cfg.training.weights.trust * trust_loss(*u, tr.final_output, Some(gt))?;
        }
        acc.push(&loss, trust, tiou(out.winner_final(), gt));
    }
    Ok(acc.finish(epoch, Split::Val))
}

/// Trains for `config.training.epochs` epochs over the matched episodes of
/// `train`, one update per episode in a freshly shuffled order each epoch.
/// `on_epoch` sees each log row as soon as it exists.
pub fn train(model: &mut Model, train: &[Episode], val: &[Episode], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    let seed = model.config.seed;
    let mut order_rng: ChaCha8Rng = stream(seed, "train/order");
    let mut rollout_rng: ChaCha8Rng = stream(seed, "train/rollout");
    let matched: Vec<&Episode> = train.iter().filter(|e| !e.is_oos()).collect();
    let mut rows = Vec::new();
    for epoch in 1..=model.config.training.epochs {
        let mut order: Vec<usize> = (0..matched.len()).collect();
        order.shuffle(&mut order_rng);
        let mut acc = Accumulator::new();
        for &i in &order {
            if let Some(s) = train_step(model, matched[i], &mut rollout_rng)? {
                acc.push(&s.loss, s.trust, s.winner_tiou);
            }
        }
        let row = acc.finish(epoch, Split::Train);
        on_epoch(&row);
        rows.push(row);
        let limit = model.config.training.val_log_episodes;
        if limit > 0 && val.iter().any(|e| !e.is_oos()) {
            let row = validation_log(model, val, limit, epoch)?;
            on_epoch(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}
