//! JSON checkpoint: a header with the architecture and seed, then every
//! array by name in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Variant};
use crate::diffcore::NumArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_vars: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub n_pos: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub variant: Variant,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<NamedArray>,
}

impl CheckpointHeader {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            n_vars: self.n_vars,
            lookback: self.lookback,
            horizon: self.horizon,
            patch_len: self.patch_len,
            n_pos: self.n_pos,
            hidden: self.hidden,
            kernel_size: self.kernel_size,
            variant: self.variant,
        }
    }
}

impl ModelParams {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        Checkpoint {
            header: CheckpointHeader {
                n_vars: c.n_vars,
                lookback: c.lookback,
                horizon: c.horizon,
                patch_len: c.patch_len,
                n_pos: c.n_pos,
                hidden: c.hidden,
                kernel_size: c.kernel_size,
                variant: c.variant,
                seed: self.seed,
            },
            arrays: self
                .named_arrays()
                .into_iter()
                .map(|(name, a)| NamedArray {
                    name: name.to_string(),
                    shape: a.shape().to_vec(),
                    values: a.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters, checking names and shapes against the header.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut params = ModelParams::init(ckpt.header.config(), ckpt.header.seed)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_arrays()
            .into_iter()
            .map(|(n, a)| (n.to_string(), a.shape().to_vec()))
            .collect();
        if expected.len() != ckpt.arrays.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} arrays, architecture needs {}",
                ckpt.arrays.len(),
                expected.len()
            )));
        }
        for (slot, ((name, shape), stored)) in params
            .arrays_mut()
            .into_iter()
            .zip(expected.iter().zip(&ckpt.arrays))
        {
            if &stored.name != name || &stored.shape != shape {
                return Err(Error::Data(format!(
                    "checkpoint array '{}' {:?} where '{}' {:?} was expected",
                    stored.name, stored.shape, name, shape
                )));
            }
            *slot = NumArray::param(stored.shape.clone(), stored.values.clone())?;
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ckpt)
    }
}
