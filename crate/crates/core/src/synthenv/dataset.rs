use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::seeding::stream;
use crate::timeline::Interval;

/// Shape and difficulty of a generated dataset.
///
/// The training split never contains out-of-scope episodes; `oos_fraction`
/// applies to validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub oos_fraction: f64,
    pub n_frames: usize,
    pub d_v: usize,
    pub d_q: usize,
    pub signal_noise_sigma: f64,
    pub moment_len_range: [f64; 2],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 2000,
            n_val: 1000,
            n_test: 1000,
            oos_fraction: 0.5,
            n_frames: 64,
            d_v: 32,
            d_q: 16,
            signal_noise_sigma: 0.5,
            moment_len_range: [0.1, 0.4],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.moment_len_range;
        if !(0.0..=1.0).contains(&self.oos_fraction) {
            return Err(Error::Config(format!("oos_fraction {} outside [0, 1]", self.oos_fraction)));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("moment_len_range {:?} must lie within (0, 1]", self.moment_len_range)));
        }
        if self.n_frames == 0 || self.d_v == 0 || self.d_q == 0 {
            return Err(Error::Config("n_frames, d_v and d_q must be positive".into()));
        }
        if self.signal_noise_sigma < 0.0 {
            return Err(Error::Config("signal_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// One (video features, query, ground truth) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    /// `[n_frames, d_v]`
    pub frames: Tensor,
    pub query: Vec<f64>,
    pub gt: Option<Interval>,
}

impl Episode {
    pub fn is_oos(&self) -> bool {
        self.gt.is_none()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn d_v(&self) -> usize {
        self.frames.shape()[1]
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    id: String,
    oos: bool,
    gt: Option<[f64; 2]>,
    query: Vec<f64>,
    frames: Vec<Vec<f64>>,
}

impl From<&Episode> for EpisodeRecord {
    fn from(ep: &Episode) -> Self {
        let n = ep.n_frames();
        EpisodeRecord {
            id: ep.id.clone(),
            oos: ep.is_oos(),
            gt: ep.gt.map(Into::into),
            query: ep.query.clone(),
            frames: (0..n).map(|i| ep.frames.row(i).to_vec()).collect(),
        }
    }
}

impl EpisodeRecord {
    fn into_episode(self) -> std::result::Result<Episode, String> {
        if self.oos != self.gt.is_none() {
            return Err(format!("episode {}: oos flag disagrees with gt", self.id));
        }
        let n = self.frames.len();
        let d = self.frames.first().map_or(0, Vec::len);
        if n == 0 || d == 0 || self.frames.iter().any(|f| f.len() != d) {
            return Err(format!("episode {}: frames must be a non-empty rectangular matrix", self.id));
        }
        if let Some([s, e]) = self.gt {
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) || s > e {
                return Err(format!("episode {}: invalid gt [{s}, {e}]", self.id));
            }
        }
        let values = self.frames.into_iter().flatten().collect();
        Ok(Episode {
            id: self.id,
            frames: Tensor::matrix(n, d, values).map_err(|e| e.to_string())?,
            query: self.query,
            gt: self.gt.map(Interval::from),
        })
    }
}

pub fn episode_to_json(ep: &Episode) -> String {
    serde_json::to_string(&EpisodeRecord::from(ep)).expect("episode serializes")
}

pub fn write_split(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut buf = Vec::new();
    for ep in episodes {
        buf.extend_from_slice(episode_to_json(ep).as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_split(path: &Path) -> Result<Vec<Episode>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            line: k + 1,
            source,
        })?;
        let ep = rec.into_episode().map_err(|msg| Error::Schema { path: path.to_path_buf(), msg })?;
        out.push(ep);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    pub test: Vec<Episode>,
}

impl Dataset {
    pub const SPLITS: [&'static str; 3] = ["train", "val", "test"];

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in Self::SPLITS.iter().zip([&self.train, &self.val, &self.test]) {
            write_split(&dir.join(format!("{name}.jsonl")), split)?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            train: read_split(&dir.join("train.jsonl"))?,
            val: read_split(&dir.join("val.jsonl"))?,
            test: read_split(&dir.join("test.jsonl"))?,
        })
    }
}

/// The fixed linear map that turns a query into the frame pattern planted
/// inside its moment. Entries are `N(0, 1/d_q)` so planted frames have unit
/// per-dimension variance.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    map: Tensor,
}

impl QueryImage {
    pub fn new(cfg: &DatasetConfig, seed: u64) -> Self {
        let mut rng = stream(seed, "data/query-image");
        let scale = 1.0 / (cfg.d_q as f64).sqrt();
        let values = (0..cfg.d_v * cfg.d_q)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        QueryImage { map: Tensor::matrix(cfg.d_v, cfg.d_q, values).expect("shape") }
    }

    pub fn apply(&self, query: &[f64]) -> Vec<f64> {
        let (rows, _) = self.map.dims2().expect("rank 2");
        (0..rows)
            .map(|r| self.map.row(r).iter().zip(query).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Inclusive frame index range whose centers lie inside `region`, if any.
///
/// Frame `i` covers `[i/n, (i+1)/n)`; its center is `(i + 0.5)/n`.
pub fn frames_inside(region: Interval, n_frames: usize) -> Option<(usize, usize)> {
    let n = n_frames as f64;
    let lo = (region.start * n - 0.5).ceil().max(0.0);
    let hi = (region.end * n - 0.5).floor().min(n - 1.0);
    if hi < lo || hi < 0.0 {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn generate_episode(cfg: &DatasetConfig, image: &QueryImage, seed: u64, id: String, oos: bool) -> Episode {
    let mut rng = stream(seed, &format!("data/episode/{id}"));
    let query: Vec<f64> = (0..cfg.d_q).map(|_| rng.sample(StandardNormal)).collect();
    let gt = (!oos).then(|| {
        let [lo, hi] = cfg.moment_len_range;
        let len = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let start = rng.random_range(0.0..=(1.0 - len));
        Interval::new(start, start + len)
    });
    let planted = gt.and_then(|g| frames_inside(g, cfg.n_frames));
    let pattern = image.apply(&query);
    let sigma = cfg.signal_noise_sigma;
    let mut values = Vec::with_capacity(cfg.n_frames * cfg.d_v);
    for i in 0..cfg.n_frames {
        let inside = planted.is_some_and(|(a, b)| i >= a && i <= b);
        for &p in &pattern {
            let noise: f64 = rng.sample(StandardNormal);
            values.push(if inside { p } else { 0.0 } + sigma * noise);
        }
    }
    Episode {
        id,
        frames: Tensor::matrix(cfg.n_frames, cfg.d_v, values).expect("shape"),
        query,
        gt,
    }
}

fn generate_split(cfg: &DatasetConfig, image: &QueryImage, seed: u64, name: &str, n: usize, oos_fraction: f64) -> Vec<Episode> {
    let n_oos = (n as f64 * oos_fraction).round() as usize;
    let mut rng = stream(seed, &format!("data/split/{name}"));
    let oos: BTreeSet<usize> = sample(&mut rng, n, n_oos.min(n)).into_iter().collect();
    (0..n)
        .map(|i| generate_episode(cfg, image, seed, format!("{name}-{i:05}"), oos.contains(&i)))
        .collect()
}

/// Builds the train/val/test splits. Deterministic for a given `(cfg, seed)`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Dataset {
    let image = QueryImage::new(cfg, seed);
    Dataset {
        train: generate_split(cfg, &image, seed, "train", cfg.n_train, 0.0),
        val: generate_split(cfg, &image, seed, "val", cfg.n_val, cfg.oos_fraction),
        test: generate_split(cfg, &image, seed, "test", cfg.n_test, cfg.oos_fraction),
    }
}
