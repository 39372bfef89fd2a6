use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{frames_inside, Episode};
use crate::diffcomp::{Activation, Dense, Gru, ParameterStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::timeline::Interval;

/// Which frames a local feature averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    Included,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// The video encoder runs over this many contiguous frame chunks.
    pub video_chunks: usize,
    pub video_hidden: usize,
    pub query_hidden: usize,
    pub local_hidden: usize,
    pub loc_hidden: usize,
    pub obs_dim: usize,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig {
            video_chunks: 8,
            video_hidden: 64,
            query_hidden: 32,
            local_hidden: 64,
            loc_hidden: 16,
            obs_dim: 64,
        }
    }
}

/// Prefix sums over frames so any region mean costs `O(d_v)`.
#[derive(Debug, Clone)]
pub struct FrameSums {
    n: usize,
    d: usize,
    prefix: Vec<f64>,
}

impl FrameSums {
    pub fn new(frames: &Tensor) -> Self {
        let (n, d) = frames.dims2().expect("frames are rank 2");
        let mut prefix = vec![0.0; (n + 1) * d];
        for i in 0..n {
            for j in 0..d {
                prefix[(i + 1) * d + j] = prefix[i * d + j] + frames.values()[i * d + j];
            }
        }
        FrameSums { n, d, prefix }
    }

    pub fn n_frames(&self) -> usize {
        self.n
    }

    /// Sum of frames `a..b` (half-open).
    fn range_sum(&self, a: usize, b: usize) -> Vec<f64> {
        (0..self.d).map(|j| self.prefix[b * self.d + j] - self.prefix[a * self.d + j]).collect()
    }

    pub fn chunk_means(&self, chunks: usize) -> Vec<Vec<f64>> {
        let chunks = chunks.clamp(1, self.n);
        (0..chunks)
            .map(|c| {
                let (a, b) = (c * self.n / chunks, (c + 1) * self.n / chunks);
                let k = (b - a) as f64;
                self.range_sum(a, b).into_iter().map(|s| s / k).collect()
            })
            .collect()
    }
}

/// Mean of the frames selected by `region` and `mode`; zero when nothing is selected.
pub fn local_mean(sums: &FrameSums, region: Interval, mode: FeatureMode) -> Vec<f64> {
    let (n, d) = (sums.n, sums.d);
    let (sum, count) = match (frames_inside(region, n), mode) {
        (Some((a, b)), FeatureMode::Included) => (sums.range_sum(a, b + 1), b + 1 - a),
        (None, FeatureMode::Included) => (vec![0.0; d], 0),
        (Some((a, b)), FeatureMode::Excluded) => {
            let left = sums.range_sum(0, a);
            let right = sums.range_sum(b + 1, n);
            (left.iter().zip(&right).map(|(l, r)| l + r).collect(), n - (b + 1 - a))
        }
        (None, FeatureMode::Excluded) => (sums.range_sum(0, n), n),
    };
    if count == 0 {
        return vec![0.0; d];
    }
    sum.into_iter().map(|s| s / count as f64).collect()
}

/// Builds `O_t = FC_O(V ⊕ Q ⊕ A_t ⊕ L_t)`.
#[derive(Debug, Clone, Copy)]
pub struct ObservationNet {
    pub video: Gru,
    pub query: Dense,
    pub query_gate: Dense,
    pub local: Dense,
    pub loc: Dense,
    pub fc_o: Dense,
    pub video_chunks: usize,
    pub obs_dim: usize,
}

/// Per-episode terms that do not change across steps.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub sums: FrameSums,
    pub v: Var,
    pub q: Var,
    pub gate: Var,
}

impl ObservationNet {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        prefix: &str,
        d_v: usize,
        d_q: usize,
        cfg: &ObservationConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let video = Gru::new(store, &format!("{prefix}.video_gru"), d_v, cfg.video_hidden, rng)?;
        let query = Dense::new(store, &format!("{prefix}.query"), d_q, cfg.query_hidden, Activation::Tanh, rng)?;
        let query_gate = Dense::new(store, &format!("{prefix}.query_gate"), d_q, d_v, Activation::Identity, rng)?;
        let local = Dense::new(store, &format!("{prefix}.local"), d_v, cfg.local_hidden, Activation::Tanh, rng)?;
        let loc = Dense::new(store, &format!("{prefix}.loc"), 2, cfg.loc_hidden, Activation::Tanh, rng)?;
        let cat = cfg.video_hidden + cfg.query_hidden + cfg.local_hidden + cfg.loc_hidden;
        let fc_o = Dense::new(store, &format!("{prefix}.fc_o"), cat, cfg.obs_dim, Activation::Tanh, rng)?;
        Ok(ObservationNet {
            video,
            query,
            query_gate,
            local,
            loc,
            fc_o,
            video_chunks: cfg.video_chunks,
            obs_dim: cfg.obs_dim,
        })
    }

    pub fn encode_episode(&self, tape: &mut Tape, store: &ParameterStore, ep: &Episode) -> EpisodeContext {
        let sums = FrameSums::new(&ep.frames);
        let xs: Vec<Var> = sums.chunk_means(self.video_chunks).into_iter().map(|c| tape.constant(c)).collect();
        let v = self.video.run(tape, store, &xs);
        let query = tape.constant(ep.query.clone());
        let q = self.query.forward(tape, store, query);
        let gate = self.query_gate.forward(tape, store, query);
        EpisodeContext { sums, v, q, gate }
    }

    /// Query-fused local feature `A_t`.
    pub fn local_feature(&self, tape: &mut Tape, store: &ParameterStore, ctx: &EpisodeContext, region: Interval, mode: FeatureMode) -> Var {
        let mean = tape.constant(local_mean(&ctx.sums, region, mode));
        let fused = tape.mul(mean, ctx.gate);
        self.local.forward(tape, store, fused)
    }

    pub fn observe(&self, tape: &mut Tape, store: &ParameterStore, ctx: &EpisodeContext, region: Interval, mode: FeatureMode) -> Var {
        let a = self.local_feature(tape, store, ctx, region, mode);
        let coords = tape.constant(vec![region.start, region.end]);
        let l = self.loc.forward(tape, store, coords);
        let cat = tape.concat(&[ctx.v, ctx.q, a, l]);
        self.fc_o.forward(tape, store, cat)
    }
}

/// Global video feature `V` for one episode.
pub fn pooled_video_feature(ep: &Episode, net: &ObservationNet, store: &ParameterStore) -> Tensor {
    let mut tape = Tape::new();
    let ctx = net.encode_episode(&mut tape, store, ep);
    Tensor::vector(tape.value(ctx.v).to_vec())
}

pub fn local_feature(ep: &Episode, region: Interval, mode: FeatureMode, net: &ObservationNet, store: &ParameterStore) -> Tensor {
    let mut tape = Tape::new();
    let ctx = net.encode_episode(&mut tape, store, ep);
    let a = net.local_feature(&mut tape, store, &ctx, region, mode);
    Tensor::vector(tape.value(a).to_vec())
}

pub fn assemble_observation(ep: &Episode, region: Interval, mode: FeatureMode, net: &ObservationNet, store: &ParameterStore) -> Tensor {
    let mut tape = Tape::new();
    let ctx = net.encode_episode(&mut tape, store, ep);
    let o = net.observe(&mut tape, store, &ctx, region, mode);
    Tensor::vector(tape.value(o).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;
    use crate::synthenv::{generate_dataset, DatasetConfig};

    fn episode(seed: u64) -> Episode {
        let cfg = DatasetConfig { n_train: 1, n_val: 0, n_test: 0, ..Default::default() };
        generate_dataset(&cfg, seed).train.remove(0)
    }

    fn net(store: &mut ParameterStore) -> ObservationNet {
        let mut rng = stream(7, "obs-test");
        ObservationNet::new(store, "obs", 32, 16, &ObservationConfig::default(), &mut rng).unwrap()
    }

    fn zero_all(store: &mut ParameterStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    #[test]
    fn full_region_means() {
        let ep = episode(1);
        let sums = FrameSums::new(&ep.frames);
        let inc = local_mean(&sums, Interval::FULL, FeatureMode::Included);
        let exc = local_mean(&sums, Interval::FULL, FeatureMode::Excluded);
        for (j, m) in inc.iter().enumerate() {
            let direct: f64 = (0..64).map(|i| ep.frames.row(i)[j]).sum::<f64>() / 64.0;
            assert!((m - direct).abs() < 1e-12);
        }
        assert!(exc.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn included_and_excluded_partition_the_mean() {
        let ep = episode(2);
        let sums = FrameSums::new(&ep.frames);
        let global = local_mean(&sums, Interval::FULL, FeatureMode::Included);
        for region in [Interval::new(0.1, 0.3), Interval::new(0.0, 0.9), Interval::new(0.5, 0.51), Interval::new(0.33, 0.77)] {
            let k = frames_inside(region, 64).map_or(0, |(a, b)| b + 1 - a) as f64;
            let inc = local_mean(&sums, region, FeatureMode::Included);
            let exc = local_mean(&sums, region, FeatureMode::Excluded);
            for j in 0..global.len() {
                let rebuilt = (k * inc[j] + (64.0 - k) * exc[j]) / 64.0;
                assert!((rebuilt - global[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn video_feature_shape_and_order_sensitivity() {
        let mut store = ParameterStore::new();
        let net = net(&mut store);
        let ep = episode(3);
        let v = pooled_video_feature(&ep, &net, &store);
        assert_eq!(v.shape(), &[64]);

        let mut reversed = ep.clone();
        let rows: Vec<f64> = (0..64).rev().flat_map(|i| ep.frames.row(i).to_vec()).collect();
        reversed.frames = Tensor::matrix(64, 32, rows).unwrap();
        let vr = pooled_video_feature(&reversed, &net, &store);
        assert!(v.values().iter().zip(vr.values()).any(|(a, b)| (a - b).abs() > 1e-6));

        let mut short = ep.clone();
        short.frames = Tensor::matrix(16, 32, ep.frames.values()[..16 * 32].to_vec()).unwrap();
        assert_eq!(pooled_video_feature(&short, &net, &store).shape(), &[64]);
    }

    #[test]
    fn zero_encoder_on_zero_frames_gives_zero() {
        let mut store = ParameterStore::new();
        let net = net(&mut store);
        zero_all(&mut store);
        let mut ep = episode(4);
        ep.frames.values_mut().iter_mut().for_each(|x| *x = 0.0);
        assert!(pooled_video_feature(&ep, &net, &store).values().iter().all(|&x| x == 0.0));
        let o = assemble_observation(&ep, Interval::new(0.2, 0.4), FeatureMode::Included, &net, &store);
        assert!(o.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_parameters_give_zero_observation() {
        let mut store = ParameterStore::new();
        let net = net(&mut store);
        zero_all(&mut store);
        let o = assemble_observation(&episode(5), Interval::new(0.2, 0.4), FeatureMode::Excluded, &net, &store);
        assert_eq!(o.shape(), &[64]);
        assert!(o.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn observation_depends_on_region() {
        let mut store = ParameterStore::new();
        let net = net(&mut store);
        let ep = episode(6);
        let a = assemble_observation(&ep, Interval::new(0.1, 0.3), FeatureMode::Included, &net, &store);
        let b = assemble_observation(&ep, Interval::new(0.5, 0.9), FeatureMode::Included, &net, &store);
        assert_eq!(a.shape(), &[64]);
        assert!(a.is_finite());
        assert!(a.values().iter().zip(b.values()).any(|(x, y)| (x - y).abs() > 1e-6));
        let l = local_feature(&ep, Interval::new(0.1, 0.3), FeatureMode::Included, &net, &store);
        assert_eq!(l.shape(), &[64]);
    }
}
