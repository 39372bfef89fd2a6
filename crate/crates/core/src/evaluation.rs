//! Greedy evaluation of a trained model: per-agent and fused localization
//! accuracy, conflict-based OOS detection and η-ranked retrieval.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{run_episode, ActionPicker, AgentTrace};
use crate::diffcomp::argmax;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::marlcc::{calibrate_threshold, rank_videos, score_trace, Calibration, OosObjective};
use crate::metrics::{acc_at, oos_metrics, pearson, recall_at_k};
use crate::model::Model;
use crate::seeding::stream;
use crate::synthenv::Episode;
use crate::timeline::{eta, tiou, Interval, Verdict};

/// Every agent's rollout on one episode plus the fused decision.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub gt: Option<Interval>,
    pub traces: Vec<AgentTrace>,
    /// Trusted IoU per agent.
    pub u: Vec<f64>,
    pub winner: usize,
    pub eta: f64,
}

impl EpisodeOutcome {
    pub fn finals(&self) -> Vec<Interval> {
        self.traces.iter().map(|t| t.final_output).collect()
    }

    pub fn winner_final(&self) -> Interval {
        self.traces[self.winner].final_output
    }
}

pub fn run_all_agents<R: Rng + ?Sized>(model: &Model, ep: &Episode, picker: ActionPicker<'_>, rng: &mut R) -> EpisodeOutcome {
    let traces: Vec<AgentTrace> =
        model.agents.iter().map(|net| run_episode(&model.store, net, &model.config.agents, ep, picker, rng)).collect();
    let u: Vec<f64> = traces.iter().map(|t| score_trace(t, &model.fusion, &model.store)).collect();
    let finals: Vec<Interval> = traces.iter().map(|t| t.final_output).collect();
    EpisodeOutcome {
        episode_id: ep.id.clone(),
        gt: ep.gt,
        winner: argmax(&u),
        eta: eta(&finals).expect("at least one agent"),
        traces,
        u,
    }
}

/// Greedy outcomes, in episode order.
pub fn evaluate_episodes(model: &Model, episodes: &[Episode]) -> Vec<EpisodeOutcome> {
    // Greedy rollouts never draw from the rng.
    let mut rng = stream(model.config.seed, "eval");
    episodes.iter().map(|ep| run_all_agents(model, ep, ActionPicker::Greedy, &mut rng)).collect()
}

/// Acc@0.5 of each agent when every action is drawn uniformly at random.
pub fn random_policy_acc50(model: &Model, episodes: &[Episode]) -> Result<Vec<f64>> {
    let mut rng = stream(model.config.seed, "random-policy");
    let matched: Vec<&Episode> = episodes.iter().filter(|e| !e.is_oos()).collect();
    model
        .agents
        .iter()
        .map(|net| {
            let pairs: Vec<(Interval, Interval)> = matched
                .iter()
                .map(|ep| {
                    let tr = run_episode(&model.store, net, &model.config.agents, ep, ActionPicker::Uniform, &mut rng);
                    (tr.final_output, ep.gt.expect("matched"))
                })
                .collect();
            acc_at(&pairs, 0.5)
        })
        .collect()
}

/// Localization and conflict statistics over a set of outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_matched: usize,
    pub n_oos: usize,
    pub agent_acc50: Vec<f64>,
    pub agent_acc70: Vec<f64>,
    pub marlcc_acc50: f64,
    pub marlcc_acc70: f64,
    /// Best agent per episode chosen with knowledge of the ground truth.
    pub oracle_acc50: f64,
    pub oracle_acc70: f64,
    /// Pearson(U, tIoU of the final output) per agent; `None` when undefined.
    pub trust_pearson: Vec<Option<f64>>,
    pub mean_eta_matched: f64,
    pub mean_eta_oos: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(outcomes: &[EpisodeOutcome]) -> Result<Summary> {
    let matched: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.gt.is_some()).collect();
    if matched.is_empty() {
        return Err(Error::EmptyInput("summarize"));
    }
    let n_agents = matched[0].traces.len();
    let pairs = |pick: &dyn Fn(&EpisodeOutcome) -> Interval| -> Vec<(Interval, Interval)> {
        matched.iter().map(|o| (pick(o), o.gt.expect("matched"))).collect()
    };
    let mut agent_acc50 = Vec::with_capacity(n_agents);
    let mut agent_acc70 = Vec::with_capacity(n_agents);
    let mut trust_pearson = Vec::with_capacity(n_agents);
    for a in 0..n_agents {
        let p = pairs(&|o| o.traces[a].final_output);
        agent_acc50.push(acc_at(&p, 0.5)?);
        agent_acc70.push(acc_at(&p, 0.7)?);
        let us: Vec<f64> = matched.iter().map(|o| o.u[a]).collect();
        let ious: Vec<f64> = p.iter().map(|&(f, g)| tiou(f, g)).collect();
        trust_pearson.push(pearson(&us, &ious));
    }
    let winners = pairs(&|o| o.winner_final());
    let oracle = pairs(&|o| {
        let gt = o.gt.expect("matched");
        let ious: Vec<f64> = o.traces.iter().map(|t| tiou(t.final_output, gt)).collect();
        o.traces[argmax(&ious)].final_output
    });
    Ok(Summary {
        n_matched: matched.len(),
        n_oos: outcomes.len() - matched.len(),
        agent_acc50,
        agent_acc70,
        marlcc_acc50: acc_at(&winners, 0.5)?,
        marlcc_acc70: acc_at(&winners, 0.7)?,
        oracle_acc50: acc_at(&oracle, 0.5)?,
        oracle_acc70: acc_at(&oracle, 0.7)?,
        trust_pearson,
        mean_eta_matched: mean(matched.iter().map(|o| o.eta)),
        mean_eta_oos: mean(outcomes.iter().filter(|o| o.gt.is_none()).map(|o| o.eta)),
    })
}

/// Picks the OOS threshold on validation outcomes.
pub fn calibrate(outcomes: &[EpisodeOutcome], objective: OosObjective) -> Result<Calibration> {
    let samples: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.eta, o.gt.is_none())).collect();
    calibrate_threshold(&samples, objective)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OosRow {
    pub episode_id: String,
    pub eta: f64,
    pub h: f64,
    pub verdict: Verdict,
    pub label: Verdict,
}

impl OosRow {
    pub fn correct(&self) -> bool {
        self.verdict == self.label
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Oos => "oos",
        Verdict::Match => "match",
    }
}

pub fn oos_rows(outcomes: &[EpisodeOutcome], h: f64) -> Vec<OosRow> {
    outcomes
        .iter()
        .map(|o| OosRow {
            episode_id: o.episode_id.clone(),
            eta: o.eta,
            h,
            verdict: if o.eta > h { Verdict::Oos } else { Verdict::Match },
            label: if o.gt.is_none() { Verdict::Oos } else { Verdict::Match },
        })
        .collect()
}

/// `(accuracy, f1)` of the rows, in percent.
pub fn oos_scores(rows: &[OosRow]) -> Result<(f64, f64)> {
    let pairs: Vec<(Verdict, Verdict)> = rows.iter().map(|r| (r.verdict, r.label)).collect();
    oos_metrics(&pairs)
}

pub fn oos_report_csv(rows: &[OosRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode_id", "eta", "h", "verdict", "label", "correct"])?;
    for r in rows {
        w.write_record([
            r.episode_id.clone(),
            r.eta.to_string(),
            r.h.to_string(),
            verdict_name(r.verdict).to_string(),
            verdict_name(r.label).to_string(),
            r.correct().to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}

/// `metric,value` lines, one per reported quantity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, f64)>,
}

impl MetricsTable {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.rows.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == name).map(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.rows {
            writeln!(out, "{k},{v}").expect("write to string");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// A text query whose source video is known, for retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalQuery {
    pub query_id: String,
    pub query: Vec<f64>,
    pub video_id: String,
}

/// One query per matched episode, pointing at that episode's video.
pub fn queries_from_episodes(episodes: &[Episode]) -> Vec<RetrievalQuery> {
    episodes
        .iter()
        .filter(|e| !e.is_oos())
        .map(|e| RetrievalQuery { query_id: e.id.clone(), query: e.query.clone(), video_id: e.id.clone() })
        .collect()
}

pub fn write_queries(path: &Path, queries: &[RetrievalQuery]) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q).expect("query serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_queries(path: &Path) -> Result<Vec<RetrievalQuery>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: RetrievalQuery =
            serde_json::from_str(&line).map_err(|e| Error::Json { path: path.into(), line: i + 1, source: e })?;
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRow {
    pub query_id: String,
    pub rank: usize,
    pub video_id: String,
    pub eta: f64,
}

/// Ranks a pool of candidate videos for every query by ascending η.
///
/// Each pool holds the query's own video plus `pool_size - 1` others drawn
/// from `videos`, in a per-query shuffled order so that η ties do not favor
/// the true video.
pub fn retrieve(model: &Model, queries: &[RetrievalQuery], videos: &[Episode]) -> Result<Vec<Vec<RetrievalRow>>> {
    let pool_size = model.config.retrieval.pool_size;
    let mut eval_rng = stream(model.config.seed, "retrieval/rollout");
    queries
        .iter()
        .map(|q| {
            let own = videos
                .iter()
                .position(|v| v.id == q.video_id)
                .ok_or_else(|| Error::Config(format!("query {}: video {} not among candidates", q.query_id, q.video_id)))?;
            if q.query.len() != model.config.dataset.d_q {
                return Err(Error::Config(format!("query {}: expected {} dims", q.query_id, model.config.dataset.d_q)));
            }
            let mut rng = stream(model.config.seed, &format!("retrieval/pool/{}", q.query_id));
            let mut others: Vec<usize> = (0..videos.len()).filter(|&i| i != own).collect();
            others.shuffle(&mut rng);
            let mut pool: Vec<usize> = others.into_iter().take(pool_size.saturating_sub(1)).collect();
            pool.push(own);
            pool.shuffle(&mut rng);
            let scored: Vec<(String, f64)> = pool
                .iter()
                .map(|&i| {
                    let v = &videos[i];
                    let ep = Episode { id: v.id.clone(), frames: v.frames.clone(), query: q.query.clone(), gt: None };
                    (v.id.clone(), run_all_agents(model, &ep, ActionPicker::Greedy, &mut eval_rng).eta)
                })
                .collect();
            Ok(rank_videos(&scored)
                .into_iter()
                .enumerate()
                .map(|(r, (video_id, eta))| RetrievalRow { query_id: q.query_id.clone(), rank: r + 1, video_id, eta })
                .collect())
        })
        .collect()
}

/// R@K for every configured K, in percent.
pub fn retrieval_recalls(rankings: &[Vec<RetrievalRow>], queries: &[RetrievalQuery], ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let ids: Vec<Vec<String>> = rankings.iter().map(|r| r.iter().map(|x| x.video_id.clone()).collect()).collect();
    let truth: Vec<String> = queries.iter().map(|q| q.video_id.clone()).collect();
    ks.iter().map(|&k| Ok((k, recall_at_k(&ids, &truth, k)?))).collect()
}

pub fn retrieval_report_csv(rankings: &[Vec<RetrievalRow>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query_id", "rank", "video_id", "eta"])?;
    for r in rankings.iter().flatten() {
        w.write_record([r.query_id.clone(), r.rank.to_string(), r.video_id.clone(), r.eta.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}

/// Everything `eval` reports on one dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub calibration: Calibration,
    pub test: Vec<EpisodeOutcome>,
    pub summary: Summary,
    pub random_acc50: Vec<f64>,
    pub oos: Vec<OosRow>,
    pub oos_accuracy: f64,
    pub oos_f1: f64,
    pub recalls: Vec<(usize, f64)>,
}

impl Evaluation {
    pub fn metrics(&self, model: &Model) -> MetricsTable {
        let s = &self.summary;
        let mut t = MetricsTable::default();
        t.push("acc50", s.marlcc_acc50);
        t.push("acc70", s.marlcc_acc70);
        t.push("oos_accuracy", self.oos_accuracy);
        t.push("oos_f1", self.oos_f1);
        for (k, r) in &self.recalls {
            t.push(format!("r_at_{k}"), *r);
        }
        t.push("oracle_acc50", s.oracle_acc50);
        t.push("oracle_acc70", s.oracle_acc70);
        for (i, net) in model.agents.iter().enumerate() {
            let n = net.kind.name();
            t.push(format!("{n}_acc50"), s.agent_acc50[i]);
            t.push(format!("{n}_acc70"), s.agent_acc70[i]);
            t.push(format!("{n}_random_acc50"), self.random_acc50[i]);
            t.push(format!("{n}_trust_pearson"), s.trust_pearson[i].unwrap_or(f64::NAN));
        }
        t.push("mean_eta_matched", s.mean_eta_matched);
        t.push("mean_eta_oos", s.mean_eta_oos);
        t.push("h", self.calibration.h);
        t.push("n_matched", s.n_matched as f64);
        t.push("n_oos", s.n_oos as f64);
        t
    }
}

/// Calibrates `h` on `val`, then evaluates `test`. Retrieval uses up to
/// `retrieval_queries` matched test queries against the test videos.
pub fn evaluate(model: &Model, val: &[Episode], test: &[Episode], retrieval_queries: usize) -> Result<Evaluation> {
    let val_out = evaluate_episodes(model, val);
    let calibration = calibrate(&val_out, model.config.oos_objective)?;
    let outcomes = evaluate_episodes(model, test);
    let summary = summarize(&outcomes)?;
    let random_acc50 = random_policy_acc50(model, test)?;
    let oos = oos_rows(&outcomes, calibration.h);
    let (oos_accuracy, oos_f1) = oos_scores(&oos)?;
    let mut queries = queries_from_episodes(test);
    queries.truncate(retrieval_queries);
    let recalls = if queries.is_empty() {
        Vec::new()
    } else {
        let rankings = retrieve(model, &queries, test)?;
        retrieval_recalls(&rankings, &queries, &model.config.retrieval.ks)?
    };
    Ok(Evaluation { calibration, test: outcomes, summary, random_acc50, oos, oos_accuracy, oos_f1, recalls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::synthenv::{generate_dataset, DatasetConfig};

    fn setup() -> (Model, crate::synthenv::Dataset) {
        let mut c = RunConfig::default();
        c.dataset = DatasetConfig { n_train: 2, n_val: 8, n_test: 8, ..Default::default() };
        c.agents.policy_hidden = 8;
        c.agents.observation.obs_dim = 8;
        c.retrieval.pool_size = 4;
        let data = generate_dataset(&c.dataset, c.seed);
        (Model::new(&c).unwrap(), data)
    }

    #[test]
    fn outcome_fields_are_consistent() {
        let (m, d) = setup();
        for o in evaluate_episodes(&m, &d.test) {
            assert_eq!(o.traces.len(), 3);
            assert_eq!(o.eta, eta(&o.finals()).unwrap());
            assert!(o.u.iter().all(|u| (0.0..=1.0).contains(u)));
            assert!(o.u.iter().all(|&u| u <= o.u[o.winner]));
        }
    }

    #[test]
    fn oracle_bounds_every_selection() {
        let (m, d) = setup();
        let s = summarize(&evaluate_episodes(&m, &d.test)).unwrap();
        for a in s.agent_acc50.iter().chain([&s.marlcc_acc50]) {
            assert!(*a <= s.oracle_acc50);
        }
        assert!(s.oracle_acc70 <= s.oracle_acc50);
    }

    #[test]
    fn oos_rows_follow_threshold() {
        let (m, d) = setup();
        let out = evaluate_episodes(&m, &d.test);
        let rows = oos_rows(&out, 0.3);
        for (r, o) in rows.iter().zip(&out) {
            assert_eq!(r.verdict == Verdict::Oos, o.eta > 0.3);
            assert_eq!(r.label == Verdict::Oos, o.gt.is_none());
        }
        let csv = oos_report_csv(&rows).unwrap();
        assert!(csv.starts_with("episode_id,eta,h,verdict,label,correct\n"));
        assert_eq!(csv.lines().count(), rows.len() + 1);
    }

    #[test]
    fn retrieval_pools_contain_the_true_video() {
        let (m, d) = setup();
        let q = queries_from_episodes(&d.test);
        let ranks = retrieve(&m, &q, &d.test).unwrap();
        for (r, q) in ranks.iter().zip(&q) {
            assert_eq!(r.len(), 4);
            assert!(r.iter().any(|x| x.video_id == q.video_id));
            assert!(r.windows(2).all(|w| w[0].eta <= w[1].eta));
        }
        let rec = retrieval_recalls(&ranks, &q, &[1, 4]).unwrap();
        assert_eq!(rec[1], (4, 100.0));
        let csv = retrieval_report_csv(&ranks).unwrap();
        assert!(csv.starts_with("query_id,rank,video_id,eta\n"));
    }

    #[test]
    fn queries_roundtrip() {
        let (_, d) = setup();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        let q = queries_from_episodes(&d.test);
        write_queries(&p, &q).unwrap();
        assert_eq!(read_queries(&p).unwrap(), q);
        std::fs::write(&p, "{\"query_id\": 1}\n").unwrap();
        assert!(read_queries(&p).is_err());
    }
}
