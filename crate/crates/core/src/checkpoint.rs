//! Versioned JSON checkpoints: every persistent tensor by name (trainable
//! weights plus batch-norm running statistics), the model shape, and
//! optionally the training configuration that produced it (prediction needs
//! its τ and segment size).
//!
//! Tensor data is stored as `f64`. serde_json prints floats with the
//! shortest round-trippable representation and (with its `float_roundtrip`
//! feature, enabled here) parses them back exactly, so an f64 save→load
//! cycle is bit-exact, and an f32 save→load cycle is too (f32→f64 widening
//! is exact and narrowing returns to the original value).

use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::scalar::Scalar;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {got} (this build reads {FORMAT_VERSION})")]
    Version { got: u32 },
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("checkpoint carries unknown tensor {name} (incompatible shape/flags?)")]
    UnknownTensor { name: String },
    #[error("tensor {name} has shape {got:?}, model expects {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    /// Snapshot of the run that produced this checkpoint, when saved by the
    /// trainer; prediction reads τ and the segment size from here.
    pub train: Option<TrainConfig>,
    pub tensors: BTreeMap<String, TensorBlob>,
}

impl Checkpoint {
    pub fn from_params<S: Scalar>(params: &ModelParams<S>, train: Option<TrainConfig>) -> Self {
        let mut tensors = BTreeMap::new();
        params.visit_state(&mut |name, data, shape| {
            tensors.insert(
                name.to_string(),
                TensorBlob {
                    shape: shape.to_vec(),
                    data: data.iter().map(|v| v.to_real()).collect(),
                },
            );
        });
        Checkpoint { format_version: FORMAT_VERSION, model: params.config, train, tensors }
    }

    /// Materialize parameters, verifying that the tensor set matches the
    /// model shape exactly — any missing, extra, or mis-shaped tensor is an
    /// error naming it.
    pub fn to_params<S: Scalar>(&self) -> Result<ModelParams<S>, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version { got: self.format_version });
        }
        let mut params = ModelParams::<S>::zeros(self.model)?;
        let mut error: Option<CheckpointError> = None;
        let mut seen: Vec<String> = Vec::new();
        params.visit_state_mut(&mut |name, data, shape| {
            if error.is_some() {
                return;
            }
            seen.push(name.to_string());
            let blob = match self.tensors.get(name) {
                Some(b) => b,
                None => {
                    error = Some(CheckpointError::MissingTensor { name: name.to_string() });
                    return;
                }
            };
            if blob.shape != shape || blob.data.len() != data.len() {
                error = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    got: blob.shape.clone(),
                    want: shape.to_vec(),
                });
                return;
            }
            for (slot, &v) in data.iter_mut().zip(&blob.data) {
                *slot = S::from_real(v);
            }
        });
        if let Some(e) = error {
            return Err(e);
        }
        for name in self.tensors.keys() {
            if !seen.iter().any(|s| s == name) {
                return Err(CheckpointError::UnknownTensor { name: name.clone() });
            }
        }
        Ok(params)
    }
}

pub fn save<S: Scalar>(
    path: impl AsRef<Path>,
    params: &ModelParams<S>,
    train: Option<&TrainConfig>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let ckpt = Checkpoint::from_params(params, train.copied());
    let json = serde_json::to_string(&ckpt)?;
    let mut file = std::fs::File::create(path)
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    file.write_all(json.as_bytes())
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let mut json = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut json))
        .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    let ckpt: Checkpoint = serde_json::from_str(&json)?;
    if ckpt.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version { got: ckpt.format_version });
    }
    Ok(ckpt)
}
