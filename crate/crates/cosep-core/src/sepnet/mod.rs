//! Object-conditioned separator: a U-Net over warped magnitude
//! spectrograms with a class-embedding conditioner fused at the 2×2
//! bottleneck, plus the audio classifier behind the consistency loss.

mod net;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{
    load_checkpoint, save_checkpoint, BnRunning, Checkpoint, Graph, GraphParams, NodeId,
    ParamStore, Tensor, TensorError,
};

#[derive(Debug, thiserror::Error)]
pub enum SepnetError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("class id {class_id} out of range (model has {n_classes} classes)")]
    BadClass { class_id: usize, n_classes: usize },
    #[error("conditioning vector has length {got}, expected {expected}")]
    BadCondDim { expected: usize, got: usize },
    #[error("bad input shape: expected {expected}, got {got:?}")]
    Shape { expected: String, got: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture of the separator and classifier. `n_classes` counts the
/// object classes plus one trailing adaptable/background class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SepnetConfig {
    /// Square spectrogram side (frequency bins == time frames).
    pub spec_size: usize,
    /// Channel cap; the encoder doubles from base/8 up to this.
    pub base_channels: usize,
    /// Conditioning vector width.
    pub cond_dim: usize,
    /// C + 1 (last row is the adaptable class).
    pub n_classes: usize,
    /// Feed log(1+magnitude) instead of raw magnitude to both networks.
    pub log_input: bool,
    /// Learning-rate multiplier for the conditioner embedding table.
    pub cond_lr_scale: f64,
}

impl SepnetConfig {
    /// Desk-scale defaults: 64×64 spectrograms, 64-channel bottleneck.
    pub fn desk(n_classes: usize) -> Self {
        SepnetConfig {
            spec_size: 64,
            base_channels: 64,
            cond_dim: 64,
            n_classes,
            log_input: true,
            cond_lr_scale: 0.1,
        }
    }

    /// Encoder/decoder depth: log2(spec_size) − 1, so the encoder always
    /// bottoms out at 2×2.
    pub fn n_layers(&self) -> usize {
        (self.spec_size.trailing_zeros() as usize).saturating_sub(1)
    }

    pub fn bottleneck_spatial(&self) -> usize {
        self.spec_size >> self.n_layers()
    }

    /// Index of the adaptable/background class (the last row).
    pub fn adaptable_class(&self) -> usize {
        self.n_classes - 1
    }

    pub fn validate(&self) -> Result<(), SepnetError> {
        if !self.spec_size.is_power_of_two() || self.spec_size < 16 {
            return Err(SepnetError::BadConfig(format!(
                "spec_size must be a power of two >= 16, got {}",
                self.spec_size
            )));
        }
        if self.base_channels < 8 || self.base_channels % 8 != 0 {
            return Err(SepnetError::BadConfig(format!(
                "base_channels must be a positive multiple of 8, got {}",
                self.base_channels
            )));
        }
        if self.cond_dim == 0 {
            return Err(SepnetError::BadConfig("cond_dim must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(SepnetError::BadConfig(format!(
                "need at least 2 classes (1 object + adaptable), got {}",
                self.n_classes
            )));
        }
        if !(self.cond_lr_scale.is_finite() && self.cond_lr_scale > 0.0) {
            return Err(SepnetError::BadConfig(format!(
                "cond_lr_scale must be positive, got {}",
                self.cond_lr_scale
            )));
        }
        debug_assert!(self.n_layers() >= 3 && self.bottleneck_spatial() == 2);
        Ok(())
    }
}

/// How one batch entry is conditioned: a class id resolved through the
/// learned embedding table, or an externally supplied vector (hook for a
/// future raw-feature encoder).
#[derive(Debug, Clone)]
pub enum Conditioning {
    Class(usize),
    Vector(Vec<f64>),
}

/// Separator + classifier + conditioner parameters and BatchNorm state.
#[derive(Debug, Clone)]
pub struct SepModel {
    pub config: SepnetConfig,
    pub params: ParamStore,
    pub bn: BTreeMap<String, BnRunning>,
}

impl SepModel {
    pub fn new(config: SepnetConfig, seed: u64) -> Result<Self, SepnetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut bn = BTreeMap::new();
        net::init_params(&config, &mut params, &mut bn, &mut rng)?;
        Ok(SepModel { config, params, bn })
    }

    /// Build the [batch, cond_dim] conditioning matrix. Class entries go
    /// through the embedding table (gradients reach only the referenced
    /// rows); vector entries are constants.
    pub fn condition_batch(
        &self,
        g: &mut Graph,
        gp: &mut GraphParams,
        conds: &[Conditioning],
    ) -> Result<NodeId, SepnetError> {
        let d = self.config.cond_dim;
        let n = conds.len();
        let mut indices = Vec::with_capacity(n);
        let mut any_vector = false;
        for c in conds {
            match c {
                Conditioning::Class(id) => {
                    if *id >= self.config.n_classes {
                        return Err(SepnetError::BadClass {
                            class_id: *id,
                            n_classes: self.config.n_classes,
                        });
                    }
                    indices.push(*id);
                }
                Conditioning::Vector(v) => {
                    if v.len() != d {
                        return Err(SepnetError::BadCondDim { expected: d, got: v.len() });
                    }
                    indices.push(0); // placeholder row, masked out below
                    any_vector = true;
                }
            }
        }
        let table = gp.bind(g, &self.params, "cond.table")?;
        let embedded = g.embed_rows(table, &indices)?;
        if !any_vector {
            return Ok(embedded);
        }
        let mut keep = vec![0.0; n * d];
        let mut external = vec![0.0; n * d];
        for (i, c) in conds.iter().enumerate() {
            match c {
                Conditioning::Class(_) => keep[i * d..(i + 1) * d].fill(1.0),
                Conditioning::Vector(v) => external[i * d..(i + 1) * d].copy_from_slice(v),
            }
        }
        let keep = g.constant(Tensor::new(vec![n, d], keep)?);
        let external = g.constant(Tensor::new(vec![n, d], external)?);
        let kept = g.mul(embedded, keep)?;
        Ok(g.add(kept, external)?)
    }

    /// Predict ratio masks for a batch of warped magnitude spectrograms
    /// [batch, 1, S, S], conditioned per entry. Output has the same shape
    /// with values in (0,1).
    pub fn separate_batch(
        &mut self,
        g: &mut Graph,
        gp: &mut GraphParams,
        x: NodeId,
        cond: NodeId,
        train: bool,
    ) -> Result<NodeId, SepnetError> {
        net::unet_forward(&self.config, g, gp, &self.params, &mut self.bn, x, cond, train)
    }

    /// Class logits and penultimate pooled features for a batch of warped
    /// magnitude spectrograms [batch, 1, S, S].
    pub fn classify_batch(
        &mut self,
        g: &mut Graph,
        gp: &mut GraphParams,
        x: NodeId,
        train: bool,
    ) -> Result<(NodeId, NodeId), SepnetError> {
        net::classifier_forward(&self.config, g, gp, &self.params, &mut self.bn, x, train)
    }

    pub fn save(&self, path: &Path) -> Result<(), SepnetError> {
        let mut ck = Checkpoint::new(
            serde_json::to_value(&self.config)
                .map_err(|e| SepnetError::BadConfig(e.to_string()))?,
        );
        ck.params = self.params.to_map();
        for (key, running) in &self.bn {
            ck.state.insert(
                format!("{key}.mean"),
                Tensor::new(vec![running.channels()], running.mean.clone())?,
            );
            ck.state.insert(
                format!("{key}.var"),
                Tensor::new(vec![running.channels()], running.var.clone())?,
            );
        }
        save_checkpoint(path, &ck)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SepnetError> {
        let ck = load_checkpoint(path)?;
        let config: SepnetConfig = serde_json::from_value(ck.config.clone())
            .map_err(|e| SepnetError::BadConfig(format!("checkpoint config: {e}")))?;
        let mut model = SepModel::new(config, 0)?;
        model.params.load_map(&ck.params)?;
        for (key, running) in model.bn.iter_mut() {
            let mean = ck.state.get(&format!("{key}.mean")).ok_or_else(|| {
                TensorError::Checkpoint(format!("missing batch-norm state '{key}.mean'"))
            })?;
            let var = ck.state.get(&format!("{key}.var")).ok_or_else(|| {
                TensorError::Checkpoint(format!("missing batch-norm state '{key}.var'"))
            })?;
            if mean.numel() != running.channels() || var.numel() != running.channels() {
                return Err(SepnetError::Tensor(TensorError::Checkpoint(format!(
                    "batch-norm state '{key}' has wrong width"
                ))));
            }
            running.mean = mean.data().to_vec();
            running.var = var.data().to_vec();
        }
        Ok(model)
    }
}
