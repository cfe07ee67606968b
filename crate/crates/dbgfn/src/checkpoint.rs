//! Parameter checkpoints.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "dbgfn-checkpoint",
//!   "version": 1,
//!   "vocab_size": 4,
//!   "seq_len": 8,
//!   "policy": { "hidden_units": 64, "hidden_layers": 2, "backward": "uniform" },
//!   "tensors": [ { "name": "forward.0.weight", "shape": [41, 64], "data": [...] }, ... ]
//! }
//! ```
//!
//! `tensors` is the shape manifest and the data in one list, in the order of
//! `PolicyParams::tensor_infos`. Weights are stored inputs-by-outputs,
//! row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is exact.

use std::fs;
use std::path::Path;

use dbgfn_core::policy::BackwardMode;
use dbgfn_core::rng::{stream, Domain};
use dbgfn_core::{EnvSpec, PolicyConfig, PolicyParams};
use serde::{Deserialize, Serialize};

use crate::config::BackwardName;
use crate::error::{Error, Result};

pub const FORMAT: &str = "dbgfn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyShape {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub backward: BackwardName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub policy: PolicyShape,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn capture(params: &PolicyParams, env: &EnvSpec, policy: &PolicyConfig) -> Self {
        let tensors = params
            .tensor_infos()
            .into_iter()
            .zip(params.tensors())
            .map(|(info, (_, data))| TensorRecord {
                name: info.name,
                shape: [info.shape.0, info.shape.1],
                data: data.to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            vocab_size: env.vocab_size(),
            seq_len: env.seq_len(),
            policy: PolicyShape {
                hidden_units: policy.hidden_units,
                hidden_layers: policy.hidden_layers,
                backward: policy.backward.into(),
            },
            tensors,
        }
    }

    /// Rebuild parameters for `env`, checking every name and shape.
    pub fn restore(&self, env: &EnvSpec) -> Result<PolicyParams> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if (self.vocab_size, self.seq_len) != (env.vocab_size(), env.seq_len()) {
            return Err(Error::Checkpoint(format!(
                "saved for V={}, L={} but the environment has V={}, L={}",
                self.vocab_size,
                self.seq_len,
                env.vocab_size(),
                env.seq_len()
            )));
        }
        let cfg = self.policy_config();
        // the draw is overwritten below; any stream will do
        let mut params = PolicyParams::new(env, &cfg, &mut stream(0, Domain::Init, 0, 0));
        let infos = params.tensor_infos();
        if infos.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                infos.len(),
                self.tensors.len()
            )));
        }
        for (info, rec) in infos.iter().zip(&self.tensors) {
            if info.name != rec.name || [info.shape.0, info.shape.1] != rec.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    rec.name, rec.shape, info.name, info.shape
                )));
            }
            if rec.data.len() != rec.shape[0] * rec.shape[1] {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has {} values",
                    rec.name,
                    rec.data.len()
                )));
            }
        }
        for ((_, dst), rec) in params.tensors_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&rec.data);
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(params)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            hidden_units: self.policy.hidden_units,
            hidden_layers: self.policy.hidden_layers,
            backward: BackwardMode::from(self.policy.backward),
            ..PolicyConfig::default()
        }
    }
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, env: &EnvSpec, policy: &PolicyConfig) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::capture(params, env, policy))?;
    fs::write(path, json).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path, env: &EnvSpec) -> Result<PolicyParams> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    ckpt.restore(env)
}
