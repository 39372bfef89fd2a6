use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use marlcc_core::agents::{read_traces, write_traces, TraceRecord};
use marlcc_core::config::{RunConfig, DEFAULT_SEED};
use marlcc_core::evaluation::{
    calibrate, evaluate, evaluate_episodes, oos_report_csv, oos_rows, oos_scores, queries_from_episodes, read_queries,
    retrieval_recalls, retrieval_report_csv, retrieve, write_queries,
};
use marlcc_core::io::write_atomic;
use marlcc_core::marlcc::OosObjective;
use marlcc_core::model::Model;
use marlcc_core::render::render_2dstb;
use marlcc_core::synthenv::{generate_dataset, read_split, Dataset};
use marlcc_core::training::{train, write_log};
use marlcc_core::Interval;

/// Overrides the seed used when a config file does not set one.
const SEED_ENV: &str = "MARLCC_SEED";

#[derive(Parser)]
#[command(name = "marlcc", version, about = "Multi-agent moment localization with conflict-based OOS detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val/test JSONL plus retrieval queries).
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all agents and the fusion network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Evaluate a checkpoint on the test split, calibrating h on the val split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV (metric,value).
        #[arg(long)]
        report: PathBuf,
        /// Per-episode OOS decisions.
        #[arg(long)]
        oos_report: Option<PathBuf>,
        /// Trace dump of every test episode, for plot-2dstb.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Use the threshold stored in this file instead of calibrating.
        #[arg(long)]
        threshold: Option<PathBuf>,
        /// Matched test queries used for R@K.
        #[arg(long, default_value_t = 100)]
        retrieval_queries: usize,
    },
    /// Choose the OOS threshold h on a validation split.
    OosCalibrate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory holding val.jsonl.
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        objective: OosObjective,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate videos for each query by ascending conflict.
    Retrieve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Directory whose test.jsonl supplies the candidate videos.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render one episode's traces as a 2DSTB map.
    #[command(name = "plot-2dstb")]
    Plot2dstb {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        episode: String,
        #[arg(long)]
        out: PathBuf,
        /// Dataset directory to look up the ground-truth moment.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_SEED),
        Err(e) => bail!("{SEED_ENV}: {e}"),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(path, default_seed()?)?)
}

fn read_threshold(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let h: f64 = text.trim().parse().with_context(|| format!("{}: not a number", path.display()))?;
    if !h.is_finite() {
        bail!("{}: threshold must be finite", path.display());
    }
    Ok(h)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let data = generate_dataset(&cfg.dataset, cfg.seed);
            data.write(&out)?;
            write_queries(&out.join("queries.jsonl"), &queries_from_episodes(&data.test))?;
            eprintln!(
                "wrote {} train, {} val, {} test episodes to {}",
                data.train.len(),
                data.val.len(),
                data.test.len(),
                out.display()
            );
        }
        Command::Train { config, data, out, log } => {
            let cfg = load_config(&config)?;
            let data = Dataset::read(&data)?;
            let mut model = Model::new(&cfg)?;
            model.check_episodes(&data.train)?;
            model.check_episodes(&data.val)?;
            let rows = train(&mut model, &data.train, &data.val, |r| {
                eprintln!(
                    "epoch {:>3} {:<5} loss {:.4} acc50 {:.2} acc70 {:.2}",
                    r.epoch,
                    r.split.name(),
                    r.loss_total(),
                    r.acc50,
                    r.acc70
                )
            })?;
            write_log(&log, &rows)?;
            model.save(&out)?;
        }
        Command::Eval { ckpt, data, report, oos_report, traces, threshold, retrieval_queries } => {
            let model = Model::load(&ckpt)?;
            let val = read_split(&data.join("val.jsonl"))?;
            let test = read_split(&data.join("test.jsonl"))?;
            model.check_episodes(&val)?;
            model.check_episodes(&test)?;
            let mut ev = evaluate(&model, &val, &test, retrieval_queries)?;
            if let Some(path) = threshold {
                ev.calibration.h = read_threshold(&path)?;
                ev.oos = oos_rows(&ev.test, ev.calibration.h);
                (ev.oos_accuracy, ev.oos_f1) = oos_scores(&ev.oos)?;
            }
            let metrics = ev.metrics(&model);
            // Render everything first so a failure leaves no partial output.
            let oos_csv = oos_report_csv(&ev.oos)?;
            metrics.write(&report)?;
            if let Some(path) = oos_report {
                write_atomic(&path, oos_csv.as_bytes())?;
            }
            if let Some(path) = traces {
                let records: Vec<TraceRecord> = ev.test.iter().flat_map(|o| o.traces.iter().map(|t| t.to_record())).collect();
                write_traces(&path, &records)?;
            }
            print!("{}", metrics.to_csv());
        }
        Command::OosCalibrate { ckpt, val, objective, out } => {
            let model = Model::load(&ckpt)?;
            let episodes = read_split(&val.join("val.jsonl"))?;
            model.check_episodes(&episodes)?;
            let cal = calibrate(&evaluate_episodes(&model, &episodes), objective)?;
            if cal.degenerate {
                eprintln!("warning: every validation conflict is identical; h = {} does not separate them", cal.h);
            }
            write_atomic(&out, format!("{}\n", cal.h).as_bytes())?;
            eprintln!("h = {} ({objective:?} {:.2})", cal.h, cal.score);
        }
        Command::Retrieve { ckpt, queries, candidates, report } => {
            let model = Model::load(&ckpt)?;
            let queries = read_queries(&queries)?;
            let videos = read_split(&candidates.join("test.jsonl"))?;
            model.check_episodes(&videos)?;
            let rankings = retrieve(&model, &queries, &videos)?;
            write_atomic(&report, retrieval_report_csv(&rankings)?.as_bytes())?;
            if !queries.is_empty() {
                for (k, r) in retrieval_recalls(&rankings, &queries, &model.config.retrieval.ks)? {
                    eprintln!("R@{k} = {r:.2}");
                }
            }
        }
        Command::Plot2dstb { traces, episode, out, data } => {
            let records: Vec<TraceRecord> =
                read_traces(&traces)?.into_iter().filter(|r| r.episode_id == episode).collect();
            if records.is_empty() {
                bail!("no traces for episode {episode:?} in {}", traces.display());
            }
            let gt = match data {
                Some(dir) => find_gt(&dir, &episode)?,
                None => None,
            };
            write_atomic(&out, render_2dstb(&records, gt).as_bytes())?;
        }
    }
    Ok(())
}

fn find_gt(dir: &Path, episode: &str) -> Result<Option<Interval>> {
    for split in Dataset::SPLITS {
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            continue;
        }
        if let Some(ep) = read_split(&path)?.into_iter().find(|e| e.id == episode) {
            return Ok(ep.gt);
        }
    }
    bail!("episode {episode:?} not found under {}", dir.display())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
