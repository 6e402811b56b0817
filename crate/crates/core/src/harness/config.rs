use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Precision;
use crate::backbone::masked_count;
use crate::clustering::SinkhornConfig;
use crate::error::{Error, Result};

/// Every hyperparameter of a pretraining run. Defaults are the desk-scale
/// configuration; full-scale reference values are noted per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Points per cloud (full scale: 1024).
    pub points_per_cloud: usize,
    /// Patch tokens per cloud (full scale: 64).
    pub patches: usize,
    /// Points per patch neighborhood.
    pub k_patch: usize,
    /// Spatial neighbors per node of the affinity graph (full scale: 4).
    pub k_graph: usize,
    /// Token width (full scale: 384).
    pub embed_dim: usize,
    /// Encoder blocks (full scale: 12).
    pub encoder_depth: usize,
    /// Decoder blocks (full scale: 4).
    pub decoder_depth: usize,
    /// Attention heads (full scale: 6).
    pub heads: usize,
    /// Cluster count (full scale: 24).
    pub clusters: usize,
    /// Score softmax temperature.
    pub tau: f64,
    /// Fraction of tokens hidden in each view (full scale: 0.6).
    pub mask_ratio: f64,
    /// Entropic regularization of the balanced assignment (full scale: 5e-4).
    pub epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    /// Per-iteration ε shrink factor of the transport warm start; `null`
    /// disables it.
    pub sinkhorn_anneal: Option<f64>,
    /// Peak learning rate (full scale: 5e-4).
    pub lr: f64,
    /// Decoupled weight decay (full scale: 0.05).
    pub weight_decay: f64,
    /// Clouds per step (full scale: 128).
    pub batch_size: usize,
    /// Passes over the dataset (full scale: 300). Ignored when `steps` is set.
    pub epochs: usize,
    /// Explicit step budget.
    pub steps: Option<usize>,
    pub seed: u64,
    pub precision: Precision,
    /// Synthetic clouds generated per shape class when `data_dir` is unset.
    pub clouds_per_class: usize,
    /// Gaussian surface noise of generated clouds.
    pub noise: f64,
    /// Directory of XYZ files to train on instead of generated shapes.
    pub data_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            points_per_cloud: 1024,
            patches: 64,
            k_patch: 32,
            k_graph: 4,
            embed_dim: 96,
            encoder_depth: 3,
            decoder_depth: 2,
            heads: 6,
            clusters: 8,
            tau: 1.0,
            mask_ratio: 0.6,
            epsilon: 5e-4,
            sinkhorn_max_iters: 200,
            sinkhorn_tol: 1e-6,
            sinkhorn_anneal: Some(0.9),
            lr: 5e-4,
            weight_decay: 0.05,
            batch_size: 8,
            epochs: 63,
            steps: Some(500),
            seed: 0,
            precision: Precision::F64,
            clouds_per_class: 16,
            noise: 0.01,
            data_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            max_iters: self.sinkhorn_max_iters,
            marginal_tol: self.sinkhorn_tol,
            anneal: self.sinkhorn_anneal,
        }
    }

    /// Total optimizer steps for a dataset of `clouds` clouds.
    pub fn total_steps(&self, clouds: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * clouds.div_ceil(self.batch_size.max(1)))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("points_per_cloud", self.points_per_cloud),
            ("patches", self.patches),
            ("k_patch", self.k_patch),
            ("k_graph", self.k_graph),
            ("embed_dim", self.embed_dim),
            ("encoder_depth", self.encoder_depth),
            ("decoder_depth", self.decoder_depth),
            ("heads", self.heads),
            ("clusters", self.clusters),
            ("batch_size", self.batch_size),
            ("sinkhorn_max_iters", self.sinkhorn_max_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patches > self.points_per_cloud || self.k_patch > self.points_per_cloud {
            return fail("patches and k_patch cannot exceed points_per_cloud".into());
        }
        if self.k_graph >= self.patches {
            return fail(format!("k_graph {} must be below patches {}", self.k_graph, self.patches));
        }
        if self.embed_dim % self.heads != 0 {
            return fail(format!("heads {} must divide embed_dim {}", self.heads, self.embed_dim));
        }
        if self.clusters < 2 || self.clusters > self.patches {
            return fail(format!("clusters must lie in [2, patches], got {}", self.clusters));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return fail(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio));
        }
        let masked = masked_count(self.patches, self.mask_ratio);
        if masked == 0 || masked >= self.patches {
            return fail(format!(
                "mask_ratio {} masks {masked} of {} patches",
                self.mask_ratio, self.patches
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("lr and weight_decay must be nonnegative".into());
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be nonnegative".into());
        }
        if self.steps.is_none() && self.epochs == 0 {
            return fail("epochs must be positive when steps is unset".into());
        }
        self.sinkhorn()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}
