//! Self-describing JSON checkpoint of a network (plus optional training
//! config echo and proxy bank).
//!
//! Floats are written in shortest round-trip form, so saving and loading
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptation::ProxyBank;
use crate::error::{Error, Result};
use crate::training::TrainConfig;
use crate::vionet::{init_network, BnEntry, ImuNorm, NetworkConfig, RunningStats, TensorSpec, VioNetwork};

pub const FORMAT: &str = "litevio-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub init_seed: u64,
    /// Θ_f in canonical order
    pub tensors: Vec<NamedTensor>,
    pub running_stats: Option<RunningStats>,
    /// Θ_a of every dictionary entry
    pub dictionary: Vec<Vec<NamedTensor>>,
    pub active_entry: usize,
    pub imu_norm: ImuNorm,
    #[serde(default)]
    pub train_stage1: Option<TrainConfig>,
    #[serde(default)]
    pub train_stage2: Option<TrainConfig>,
    /// seed of the data the model was trained on
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub proxies: Option<ProxyBank>,
}

fn named(specs: &[TensorSpec], data: &[Vec<f64>]) -> Vec<NamedTensor> {
    specs
        .iter()
        .zip(data)
        .map(|(s, d)| NamedTensor {
            name: s.name.clone(),
            shape: s.shape.clone(),
            data: d.clone(),
        })
        .collect()
}

/// Tensors in `specs` order, looked up by name.
fn unnamed(specs: &[TensorSpec], tensors: &[NamedTensor], what: &str) -> Result<Vec<Vec<f64>>> {
    if tensors.len() != specs.len() {
        return Err(Error::Structural(format!(
            "{what}: checkpoint has {} tensors, network expects {}",
            tensors.len(),
            specs.len()
        )));
    }
    specs
        .iter()
        .map(|s| {
            let t = tensors
                .iter()
                .find(|t| t.name == s.name)
                .ok_or_else(|| Error::Structural(format!("{what}: tensor {} missing", s.name)))?;
            if t.shape != s.shape || t.data.len() != s.len() {
                return Err(Error::Structural(format!(
                    "{what}: tensor {} has shape {:?} ({} values), expected {:?}",
                    s.name,
                    t.shape,
                    t.data.len(),
                    s.shape
                )));
            }
            Ok(t.data.clone())
        })
        .collect()
}

impl Checkpoint {
    pub fn from_network(net: &VioNetwork) -> Checkpoint {
        let lay = net.layout();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            network: net.config().clone(),
            init_seed: net.init_seed(),
            tensors: named(&lay.frozen, net.frozen_params()),
            running_stats: net.running_stats().cloned(),
            dictionary: net.dictionary().iter().map(|e| named(&lay.affine, &e.tensors)).collect(),
            active_entry: net.active_entry(),
            imu_norm: *net.imu_norm(),
            train_stage1: None,
            train_stage2: None,
            data_seed: None,
            proxies: None,
        }
    }

    pub fn to_network(&self) -> Result<VioNetwork> {
        if self.format != FORMAT {
            return Err(Error::Structural(format!("not a checkpoint (format {:?})", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Structural(format!(
                "checkpoint version {} unsupported (expected {VERSION})",
                self.version
            )));
        }
        let mut net = init_network(&self.network, self.init_seed)?;
        let frozen = unnamed(&net.layout().frozen, &self.tensors, "parameters")?;
        net.set_frozen_params(frozen)?;
        let entries = self
            .dictionary
            .iter()
            .enumerate()
            .map(|(k, e)| {
                Ok(BnEntry {
                    tensors: unnamed(&net.layout().affine, e, &format!("BN entry {k}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        net.set_dictionary(entries, self.active_entry)?;
        net.set_running_stats(self.running_stats.clone())?;
        net.set_imu_norm(self.imu_norm)?;
        if let Some(b) = &self.proxies {
            b.validate()?;
            if b.len() != net.num_entries() {
                return Err(Error::Structural(format!(
                    "proxy bank has {} entries, dictionary {}",
                    b.len(),
                    net.num_entries()
                )));
            }
        }
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
