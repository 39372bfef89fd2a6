//! Shared fixtures for the benchmarks.

use marlcc_core::config::RunConfig;
use marlcc_core::model::Model;
use marlcc_core::synthenv::{generate_dataset, Dataset, DatasetConfig};

/// Default-sized model with a handful of episodes per split.
pub fn fixture(episodes: usize) -> (Model, Dataset) {
    let mut cfg = RunConfig::default();
    cfg.dataset = DatasetConfig { n_train: episodes, n_val: episodes, n_test: episodes, ..Default::default() };
    let data = generate_dataset(&cfg.dataset, cfg.seed);
    (Model::new(&cfg).expect("default config is valid"), data)
}
