//! All networks of a run in one parameter store, plus checkpoint I/O.

use std::path::Path;

use crate::agents::{AgentKind, AgentNet};
use crate::config::RunConfig;
use crate::diffcomp::{decode_checkpoint, encode_checkpoint, ParameterStore};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::marlcc::FusionNet;
use crate::seeding::stream;
use crate::synthenv::Episode;

const STORE_NAME: &str = "model";

#[derive(Debug, Clone)]
pub struct Model {
    pub config: RunConfig,
    pub store: ParameterStore,
    pub agents: Vec<AgentNet>,
    pub fusion: FusionNet,
}

impl Model {
    /// Fresh parameters drawn from the run seed.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "init");
        let mut store = ParameterStore::new();
        let (d_v, d_q) = (config.dataset.d_v, config.dataset.d_q);
        let agents = AgentKind::ALL
            .iter()
            .map(|&k| AgentNet::new(&mut store, k, d_v, d_q, &config.agents, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionNet::new(&mut store, "fusion", &config.fusion, &mut rng)?;
        Ok(Model { config: config.clone(), store, agents, fusion })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.config.to_json(), &[(STORE_NAME, &self.store)])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = decode_checkpoint(bytes)?;
        let config: RunConfig =
            serde_json::from_str(&ck.config_json).map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut model = Model::new(&config)?;
        let [(name, store)] = <[_; 1]>::try_from(ck.stores)
            .map_err(|s: Vec<_>| Error::Checkpoint(format!("expected one parameter store, found {}", s.len())))?;
        if name != STORE_NAME {
            return Err(Error::Checkpoint(format!("unexpected store {name:?}")));
        }
        if store.len() != model.store.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", model.store.len(), store.len())));
        }
        for (want, got) in model.store.entries().iter().zip(store.entries()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        model.store = store;
        Ok(model)
    }

    /// Rejects episodes whose feature sizes differ from the model's.
    pub fn check_episodes(&self, episodes: &[Episode]) -> Result<()> {
        let (d_v, d_q) = (self.config.dataset.d_v, self.config.dataset.d_q);
        for ep in episodes {
            if ep.d_v() != d_v || ep.query.len() != d_q || ep.n_frames() == 0 {
                return Err(Error::Config(format!(
                    "episode {}: features are {}x{} with a {}-dim query, model expects d_v {d_v} and d_q {d_q}",
                    ep.id,
                    ep.n_frames(),
                    ep.d_v(),
                    ep.query.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
