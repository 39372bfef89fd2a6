//! Central finite-difference oracle shared by the gradient and acceptance tests.
#![allow(dead_code)]

use marlcc_core::diffcomp::{Activation, Dense, Gru, ParamId, ParameterStore, Tape, Tensor, Var};
use marlcc_core::evidential::{evidential_loss_var, EvidenceHead};
use rand::seq::index::sample;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences of an O(10)
/// loss at this step carry up to about 1e-9 of rounding noise, so a gradient
/// below 1e-5 is held to an absolute error of 1e-9 instead.
pub const FD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Compares the gradients already stored in `store` against central
/// differences of `loss`, for every parameter whose name starts with one of
/// `prefixes` (all parameters when empty). Each parameter contributes its
/// largest-gradient entry plus up to `per_param` random entries.
///
/// Returns the worst relative error seen per parameter and any entry above
/// tolerance.
pub fn check_gradients<R: Rng>(
    store: &ParameterStore,
    loss: &dyn Fn(&ParameterStore) -> f64,
    prefixes: &[&str],
    per_param: usize,
    rng: &mut R,
) -> (Vec<(String, f64)>, Vec<Mismatch>) {
    let mut worst = Vec::new();
    let mut bad = Vec::new();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let entry = store.entry(id);
        if !prefixes.is_empty() && !prefixes.iter().any(|p| entry.name.starts_with(p)) {
            continue;
        }
        let n = entry.value.len();
        let mut picks: Vec<usize> = sample(rng, n, per_param.min(n)).into_vec();
        let top = (0..n).max_by(|&a, &b| entry.grad[a].abs().total_cmp(&entry.grad[b].abs())).unwrap();
        picks.push(top);
        picks.sort_unstable();
        picks.dedup();
        let mut w = 0.0f64;
        for i in picks {
            let analytic = entry.grad[i];
            let mut plus = store.clone();
            plus.value_mut(id).values_mut()[i] += FD_STEP;
            let mut minus = store.clone();
            minus.value_mut(id).values_mut()[i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let rel = relative_error(analytic, numeric);
            w = w.max(rel);
            if rel > FD_TOLERANCE || !rel.is_finite() {
                bad.push(Mismatch { param: entry.name.clone(), index: i, analytic, numeric, rel });
            }
        }
        worst.push((entry.name.clone(), w));
    }
    (worst, bad)
}

use marlcc_core::agents::{run_episode, ActionPicker, AgentKind, AgentTrace};
use marlcc_core::config::RunConfig;
use marlcc_core::marlcc::score_trace;
use marlcc_core::model::Model;
use marlcc_core::seeding::stream;
use marlcc_core::synthenv::{generate_dataset, DatasetConfig, Episode};
use marlcc_core::tiou;
use marlcc_core::training::{accumulate_episode_grads, agent_loss, assign_rewards, returns, LossWeights};

/// A model small enough for finite differences over every parameter block.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.dataset = DatasetConfig { n_train: 3, n_val: 0, n_test: 0, n_frames: 16, d_v: 6, d_q: 4, ..Default::default() };
    c.agents.steps = 4;
    c.agents.policy_hidden = 5;
    c.agents.observation.video_chunks = 4;
    c.agents.observation.video_hidden = 5;
    c.agents.observation.query_hidden = 4;
    c.agents.observation.local_hidden = 5;
    c.agents.observation.loc_hidden = 3;
    c.agents.observation.obs_dim = 6;
    c.fusion.evi_hidden = 4;
    c.fusion.iou_hidden = 3;
    c.fusion.loc_hidden = 3;
    c.fusion.gru_hidden = 4;
    c.fusion.trust_hidden = 4;
    c.training.weights = LossWeights { evi: 0.7, iou: 1.3, dist: 0.9, loc: 1.1, policy: 0.8, value: 0.6, trust: 1.2 };
    c
}

/// What one sampled rollout per agent fixes for the finite-difference oracle:
/// the actions, the critic values the advantage was formed with, and the
/// traces the fusion network saw.
pub struct Baseline {
    pub actions: Vec<Vec<[usize; 2]>>,
    pub values: Vec<Vec<f64>>,
    pub traces: Vec<AgentTrace>,
}

/// Replays the sampling the library performs with the rng `stream(seed, label)`.
pub fn baseline(model: &Model, ep: &Episode, seed: u64, label: &str) -> Baseline {
    let mut rng = stream(seed, label);
    let traces: Vec<AgentTrace> = model
        .agents
        .iter()
        .map(|net| run_episode(&model.store, net, &model.config.agents, ep, ActionPicker::Sample, &mut rng))
        .collect();
    Baseline {
        actions: traces.iter().map(|t| t.steps.iter().map(|s| s.actions).collect()).collect(),
        values: traces.iter().map(|t| t.steps.iter().map(|s| s.value).collect()).collect(),
        traces,
    }
}

/// The joint objective rebuilt from value-level pieces, with the advantage
/// held at its baseline value. Under stop-gradient the fusion network scores
/// the baseline traces, so agent parameters only reach it when gradients
/// propagate.
pub fn joint_loss_oracle(model: &Model, store: &ParameterStore, ep: &Episode, base: &Baseline) -> f64 {
    let cfg = &model.config;
    let w = &cfg.training.weights;
    let gt = ep.gt.expect("matched episode");
    let gamma = cfg.training.discount;
    let aux_only = LossWeights { policy: 0.0, value: 0.0, ..w.clone() };
    let mut rng = stream(0, "unused");
    let mut total = 0.0;
    for (a, net) in model.agents.iter().enumerate() {
        let mut tr =
            run_episode(store, net, &cfg.agents, ep, ActionPicker::Scripted(&base.actions[a]), &mut rng);
        assign_rewards(&mut tr, gt, &cfg.reward);
        total += agent_loss(&tr, ep, cfg.agents.window, gamma, &aux_only).unwrap().total;
        let rewards: Vec<f64> = tr.steps.iter().map(|s| s.reward).collect();
        let rets = returns(&rewards, gamma);
        let n = tr.steps.len() as f64;
        let mut policy = 0.0;
        let mut value = 0.0;
        for (t, s) in tr.steps.iter().enumerate() {
            policy -= (s.log_probs[0] + s.log_probs[1]) * (rets[t] - base.values[a][t]);
            value += (rets[t] - s.value).powi(2) / n;
        }
        total += w.policy * policy + w.value * value;
        let seen = if cfg.fusion.propagate_to_agents { &tr } else { &base.traces[a] };
        let u = score_trace(seen, &model.fusion, store);
        total += w.trust * (u - tiou(tr.final_output, gt)).powi(2);
    }
    total
}

pub const AGENT_BLOCKS: [&str; 14] = [
    "obs.video_gru", "obs.query", "obs.query_gate", "obs.local", "obs.loc", "obs.fc_o", "policy_gru", "pi_start",
    "pi_end", "value", "evidence", "iou", "dist", "loc",
];
pub const FUSION_BLOCKS: [&str; 6] = ["ffn_evi", "ffn_iou", "ffn_loc", "gru", "ffn_tr", "ffn_out"];

/// Outcome of one finite-difference check.
#[derive(Debug)]
pub struct BlockReport {
    pub name: String,
    pub worst: f64,
    pub mismatches: Vec<Mismatch>,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.worst.is_finite()
    }
}

fn report(name: impl Into<String>, seen: &[(String, f64)], bad: Vec<Mismatch>) -> BlockReport {
    BlockReport { name: name.into(), worst: seen.iter().map(|s| s.1).fold(0.0, f64::max), mismatches: bad }
}

/// Runs `build` on a fresh tape, back-propagates, and checks every parameter.
pub fn check_graph(name: &str, store: &mut ParameterStore, build: &dyn Fn(&mut Tape, &ParameterStore) -> Var) -> BlockReport {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    tape.backward(loss, store).unwrap();
    let f = |s: &ParameterStore| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.scalar(l)
    };
    let (seen, bad) = check_gradients(store, &f, &[], 6, &mut stream(1, "fd-pick"));
    report(name, &seen, bad)
}

pub fn random_param(store: &mut ParameterStore, name: &str, n: usize, lo: f64, hi: f64, seed: u64) {
    let mut rng = stream(seed, name);
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    store.add(name, Tensor::vector(v)).unwrap();
}

/// Projects a vector onto fixed random weights so every output entry matters.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let n = tape.value(x).len();
    let mut rng = stream(seed, "projection");
    let w = tape.constant((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
    let p = tape.mul(x, w);
    tape.sum(p)
}

pub fn check_ops() -> BlockReport {
    let mut store = ParameterStore::new();
    random_param(&mut store, "a", 5, -2.0, 2.0, 1);
    random_param(&mut store, "b", 5, -2.0, 2.0, 2);
    random_param(&mut store, "pos", 5, 0.3, 3.0, 3);
    check_graph("tape ops", &mut store, &|t, s| {
        let a = t.param(s, s.id("a").unwrap());
        let b = t.param(s, s.id("b").unwrap());
        let p = t.param(s, s.id("pos").unwrap());
        let terms = [
            t.add(a, b),
            t.sub(a, b),
            t.mul(a, b),
            t.scale(a, -1.7),
            t.offset(b, 0.3),
            t.sigmoid(a),
            t.tanh(b),
            t.softplus(a),
            t.ln(p),
            t.square(b),
        ];
        let mut outs: Vec<Var> = terms.iter().enumerate().map(|(i, &x)| project(t, x, i as u64)).collect();
        let c = t.concat(&[a, b, p]);
        outs.push(project(t, c, 20));
        let sl = t.slice(c, 3, 6);
        outs.push(project(t, sl, 21));
        outs.push(t.mean(b));
        let ls = t.log_softmax(a);
        outs.push(t.pick(ls, 2));
        t.add_all(&outs)
    })
}

pub fn check_relu() -> BlockReport {
    let mut store = ParameterStore::new();
    store.add("x", Tensor::vector(vec![-1.2, -0.4, 0.3, 0.9, 2.0])).unwrap();
    check_graph("relu", &mut store, &|t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let r = t.relu(x);
        project(t, r, 4)
    })
}

pub fn check_dense(act: Activation) -> BlockReport {
    let mut store = ParameterStore::new();
    let mut rng = stream(5, "dense");
    let d = Dense::new(&mut store, "d", 4, 3, act, &mut rng).unwrap();
    random_param(&mut store, "x", 4, -1.0, 1.0, 6);
    check_graph(&format!("dense {act:?}"), &mut store, &|t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let y = d.forward(t, s, x);
        project(t, y, 7)
    })
}

pub fn check_gru() -> BlockReport {
    let mut store = ParameterStore::new();
    let mut rng = stream(8, "gru");
    let g = Gru::new(&mut store, "g", 3, 4, &mut rng).unwrap();
    for k in 0..4 {
        random_param(&mut store, &format!("x{k}"), 3, -1.0, 1.0, 9 + k as u64);
    }
    check_graph("gru", &mut store, &|t, s| {
        let xs: Vec<Var> = (0..4).map(|k| t.param(s, s.id(&format!("x{k}")).unwrap())).collect();
        let h = g.run(t, s, &xs);
        project(t, h, 13)
    })
}

pub fn check_evidence(class: usize) -> BlockReport {
    let mut store = ParameterStore::new();
    let mut rng = stream(14, "evi");
    let head = EvidenceHead::new(&mut store, "e", 5, &mut rng).unwrap();
    random_param(&mut store, "x", 5, -1.0, 1.0, 15);
    check_graph(&format!("evidence head + loss, class {class}"), &mut store, &|t, s| {
        let x = t.param(s, s.id("x").unwrap());
        let e = head.forward(t, s, x);
        evidential_loss_var(t, e, class)
    })
}

/// Every agent and fusion block of the full model against the value-level
/// oracle, one report per block.
pub fn check_joint_model(propagate: bool) -> Vec<BlockReport> {
    let mut cfg = tiny_config();
    cfg.fusion.propagate_to_agents = propagate;
    let data = generate_dataset(&cfg.dataset, 3);
    let prefixes: Vec<String> = AgentKind::ALL
        .iter()
        .flat_map(|k| AGENT_BLOCKS.iter().map(move |b| format!("{}.{b}.", k.name())))
        .chain(FUSION_BLOCKS.iter().map(|b| format!("fusion.{b}.")))
        .collect();
    let mut reports: Vec<BlockReport> = prefixes
        .iter()
        .map(|p| BlockReport { name: format!("{p} (propagate={propagate})"), worst: 0.0, mismatches: Vec::new() })
        .collect();
    for (k, ep) in data.train.iter().enumerate() {
        let mut model = Model::new(&cfg).unwrap();
        let label = format!("episode-{k}");
        let base = baseline(&model, ep, 11, &label);
        accumulate_episode_grads(&mut model, ep, &mut stream(11, &label)).unwrap().unwrap();
        let f = |s: &ParameterStore| joint_loss_oracle(&model, s, ep, &base);
        for (p, r) in prefixes.iter().zip(reports.iter_mut()) {
            let (seen, bad) = check_gradients(&model.store, &f, &[p], 3, &mut stream(k as u64, p));
            if seen.is_empty() {
                r.worst = f64::NAN;
            }
            r.worst = seen.iter().map(|s| s.1).fold(r.worst, f64::max);
            r.mismatches.extend(bad);
        }
    }
    reports
}

/// All gradient checks, for the acceptance report.
pub fn gradient_suite() -> Vec<BlockReport> {
    let mut out = vec![check_ops(), check_relu()];
    for act in [Activation::Identity, Activation::Relu, Activation::Sigmoid, Activation::Softplus, Activation::Tanh] {
        out.push(check_dense(act));
    }
    out.push(check_gru());
    for c in [0, 7, 15] {
        out.push(check_evidence(c));
    }
    out.extend(check_joint_model(false));
    out.extend(check_joint_model(true));
    out
}
