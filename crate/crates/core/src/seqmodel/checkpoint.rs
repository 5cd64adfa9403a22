//! Self-describing checkpoint container.
//!
//! Serialized as JSON: model configuration, normalization statistics, the
//! quantizer references used to build behavior vectors, and every parameter
//! tensor under its canonical name and shape. f64 values round-trip
//! bit-exactly through serde_json's shortest-representation formatting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, TensorMut};
use super::ModelConfig;
use crate::preference::QuantizerSet;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-channel z-score statistics applied to model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Normalization {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    /// Behavior-vector statistics; empty when the context input is not
    /// normalized (one-hot labels) or absent.
    pub ctx_mean: Vec<f64>,
    pub ctx_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            obs_mean: vec![0.0; channels],
            obs_std: vec![1.0; channels],
            ctx_mean: Vec::new(),
            ctx_std: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// A trained model plus everything needed to evaluate it on raw windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub normalization: Normalization,
    /// Quantizers that produced the behavior vectors (DBV variant).
    pub quantizers: Option<QuantizerSet>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(
        params: &ModelParams,
        normalization: Normalization,
        quantizers: Option<QuantizerSet>,
    ) -> Self {
        let tensors = params
            .visit()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                shape: t.shape(),
                data: t.iter().copied().collect(),
                name,
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: params.config.clone(),
            normalization,
            quantizers,
            tensors,
        }
    }

    /// Rebuild the parameter tensors; names and shapes must match the
    /// configuration exactly.
    pub fn to_params(&self) -> Result<ModelParams> {
        self.config.validate()?;
        let mut params = ModelParams::init(&self.config);
        let mut stored: std::collections::HashMap<&str, &NamedTensor> = self
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t))
            .collect();
        for (name, tensor) in params.visit_mut() {
            let t = stored.remove(name.as_str()).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {name}"))
            })?;
            match tensor {
                TensorMut::M(m) => {
                    if t.shape != m.shape() {
                        return Err(Error::Checkpoint(format!(
                            "tensor {name} has shape {:?}, expected {:?}",
                            t.shape,
                            m.shape()
                        )));
                    }
                    for (dst, src) in m.iter_mut().zip(&t.data) {
                        *dst = *src;
                    }
                }
                TensorMut::V(v) => {
                    if t.shape != v.shape() {
                        return Err(Error::Checkpoint(format!(
                            "tensor {name} has shape {:?}, expected {:?}",
                            t.shape,
                            v.shape()
                        )));
                    }
                    for (dst, src) in v.iter_mut().zip(&t.data) {
                        *dst = *src;
                    }
                }
            }
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
