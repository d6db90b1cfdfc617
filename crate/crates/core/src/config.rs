//! Flat run configuration, echoed verbatim into every run directory.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::PretrainConfig;
use crate::error::{Error, Result};
use crate::walk::{MaskMode, Ordering, WalkConfig};

/// Source of the node embeddings fed to the LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    /// Learned by neighborhood pretraining on the training graphs.
    #[default]
    Pretrained,
    /// i.i.d. N(0, 1) entries.
    Randomized,
    /// One-hot node labels used directly (d = k).
    Raw,
}

impl EmbeddingMode {
    pub const ALL: [EmbeddingMode; 3] = [
        EmbeddingMode::Pretrained,
        EmbeddingMode::Randomized,
        EmbeddingMode::Raw,
    ];
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(EmbeddingMode::Pretrained),
            "randomized" => Ok(EmbeddingMode::Randomized),
            "raw" => Ok(EmbeddingMode::Raw),
            other => Err(Error::argument(format!(
                "unknown embedding `{other}` (expected pretrained|randomized|raw)"
            ))),
        }
    }
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Pretrained => "pretrained",
            EmbeddingMode::Randomized => "randomized",
            EmbeddingMode::Raw => "raw",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<String>,
    /// Embedding size.
    pub d: usize,
    /// LSTM hidden size.
    pub h: usize,
    /// Classifier hidden size.
    pub h_cls: usize,
    pub tau: f64,
    /// Pretraining neighborhood radius.
    #[serde(rename = "K")]
    pub k: usize,
    pub k_rw: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay; 1.0 disables it.
    pub lr_decay: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch_nodes: usize,
    /// Predictor hidden size; defaults to `d`.
    pub pretrain_hidden: Option<usize>,
    pub pretrain_on_all: bool,
    pub epochs: usize,
    /// Graphs per Adam step.
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub ordering: Ordering,
    pub embedding: EmbeddingMode,
    pub mask_mode: MaskMode,
    pub walk_len: Option<usize>,
    pub finetune_embeddings: bool,
    pub tie_hidden_if: bool,
    pub num_eval_samples: usize,
    /// Evaluate the held-out fold every this many epochs (0: final only).
    pub eval_every: usize,
    pub max_nodes: Option<usize>,
    /// Number of seeds for ablation studies.
    pub seeds: usize,
    pub grid_d: Vec<usize>,
    pub grid_tau: Vec<f64>,
    pub grid_h: Vec<usize>,
    pub grid_h_cls: Vec<usize>,
    /// Fill the wall-clock column of metrics.csv.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            d: 32,
            h: 32,
            h_cls: 32,
            tau: 0.5,
            k: 2,
            k_rw: 2,
            lr: 1e-4,
            lr_decay: 1.0,
            pretrain_epochs: 100,
            pretrain_lr: 1e-4,
            pretrain_batch_nodes: 256,
            pretrain_hidden: None,
            pretrain_on_all: false,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            folds: 10,
            ordering: Ordering::Learned,
            embedding: EmbeddingMode::Pretrained,
            mask_mode: MaskMode::Paper,
            walk_len: None,
            finetune_embeddings: false,
            tie_hidden_if: false,
            num_eval_samples: 5,
            eval_every: 10,
            max_nodes: None,
            seeds: 3,
            grid_d: vec![16, 32, 64, 128],
            grid_tau: vec![0.5, 0.01, 0.0001],
            grid_h: vec![32],
            grid_h_cls: vec![32],
            record_timing: false,
        }
    }
}

impl RunConfig {
    /// Parses a flat JSON document; missing keys take defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // unknown fields surface at the root; pull the name out of the message
            let key = if key == "." || key.is_empty() {
                msg.split('`').nth(1).unwrap_or("<root>").to_string()
            } else {
                key
            };
            Error::Config { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.d == 0 {
            return bad("d", "must be ≥ 1");
        }
        if self.h == 0 {
            return bad("h", "must be ≥ 1");
        }
        if self.h_cls == 0 {
            return bad("h_cls", "must be ≥ 1");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad("tau", "must be > 0");
        }
        if self.k == 0 {
            return bad("K", "must be ≥ 1");
        }
        if self.k_rw == 0 {
            return bad("k_rw", "must be ≥ 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr", "must be > 0");
        }
        if self.pretrain_lr.is_nan() || self.pretrain_lr <= 0.0 {
            return bad("pretrain_lr", "must be > 0");
        }
        if self.lr_decay.is_nan() || self.lr_decay <= 0.0 {
            return bad("lr_decay", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be ≥ 1");
        }
        if self.folds < 2 {
            return bad("folds", "must be ≥ 2");
        }
        if self.num_eval_samples == 0 {
            return bad("num_eval_samples", "must be ≥ 1");
        }
        if self.walk_len == Some(0) {
            return bad("walk_len", "must be ≥ 1");
        }
        if self.pretrain_batch_nodes == 0 {
            return bad("pretrain_batch_nodes", "must be ≥ 1");
        }
        Ok(())
    }

    /// Radius to which neighbor sets must be computed.
    pub fn neighbor_radius(&self) -> usize {
        self.k.max(self.k_rw)
    }

    pub fn walk(&self) -> WalkConfig {
        WalkConfig {
            tau: self.tau,
            k_rw: self.k_rw,
            mask_mode: self.mask_mode,
            walk_len: self.walk_len,
        }
    }

    pub fn pretrain(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            radius: self.k,
            dim: self.d,
            hidden: self.pretrain_hidden,
            epochs: self.pretrain_epochs,
            lr: self.pretrain_lr,
            batch_nodes: self.pretrain_batch_nodes,
            seed,
        }
    }
}
