//! Versioned model checkpoints: named parameter tensors plus the
//! preprocessing statistics and held-out patient ids of the fold that
//! produced them, so downstream tools can rebuild identical inputs.

use crate::cohort::{ClipBounds, EndpointStats, NormStats, Task, Window, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::eval::Regime;
use crate::loss::LossKind;
use crate::model::EncoderKind;
use crate::numerics::Tensor;
use crate::train::{ModelParams, TrainedModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "contrail-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training-fold statistics needed to preprocess new patients exactly as
/// the fold's training data was.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSnapshot {
    pub clip: ClipBounds,
    pub norm: NormStats,
    pub endpoint: EndpointStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub encoder: EncoderKind,
    pub loss: LossKind,
    pub window: Window,
    pub regime: Regime,
    /// Down-sampling target that produced the restricted cohort, when the
    /// run was restricted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restricted_rate: Option<f64>,
    pub latent: usize,
    pub fold: usize,
    pub seed: u64,
    params: Vec<NamedTensor>,
    pub preprocess: PreprocessSnapshot,
    pub holdout_ids: Vec<String>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn from_trained(
        model: &TrainedModel,
        window: Window,
        regime: Regime,
        restricted_rate: Option<f64>,
        fold: usize,
        seed: u64,
        preprocess: PreprocessSnapshot,
        holdout_ids: Vec<String>,
    ) -> Self {
        let p = &model.params;
        let mut params = Vec::new();
        let mut push = |names: Vec<&'static str>, tensors: Vec<&Tensor>| {
            for (name, t) in names.into_iter().zip(tensors) {
                params.push(NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                });
            }
        };
        push(p.encoder.names(), p.encoder.tensors());
        push(
            crate::model::EventParams::names(),
            p.event.tensors(),
        );
        push(crate::model::FusionParams::names(), p.fusion.tensors());
        push(crate::loss::CelHead::names(), p.head.tensors());
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            task: model.task,
            encoder: model.encoder_kind(),
            loss: model.loss_kind,
            window,
            regime,
            restricted_rate,
            latent: p.latent,
            fold,
            seed,
            params,
            preprocess,
            holdout_ids,
        }
    }

    /// Rebuild the full parameter set; every named tensor must be present
    /// with its recorded shape.
    pub fn to_model(&self) -> Result<TrainedModel> {
        let mut params = ModelParams::init(self.latent, FEATURE_COUNT, self.encoder, 0);
        let mut assign = |names: Vec<&'static str>, tensors: Vec<&mut Tensor>| -> Result<()> {
            for (name, slot) in names.into_iter().zip(tensors) {
                let stored = self
                    .params
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| Error::contract(format!("checkpoint lacks tensor `{name}`")))?;
                let tensor = Tensor::new(stored.shape.clone(), stored.data.clone())?;
                if tensor.shape() != slot.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "checkpoint_load",
                        lhs: tensor.shape().to_vec(),
                        rhs: slot.shape().to_vec(),
                    });
                }
                *slot = tensor;
            }
            Ok(())
        };
        let names = params.encoder.names();
        assign(names, params.encoder.tensors_mut())?;
        assign(
            crate::model::EventParams::names(),
            params.event.tensors_mut(),
        )?;
        assign(
            crate::model::FusionParams::names(),
            params.fusion.tensors_mut(),
        )?;
        assign(crate::loss::CelHead::names(), params.head.tensors_mut())?;
        Ok(TrainedModel {
            task: self.task,
            loss_kind: self.loss,
            params,
            trace: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::contract(format!(
                "not a checkpoint file: format `{}`",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
