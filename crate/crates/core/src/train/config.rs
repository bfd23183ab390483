use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::cluster::KlSign;

/// Neighborhood sampling around each batch of seed nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Target nodes seeding one batch.
    pub batch_size: usize,
    /// New nodes of each type that one hop may add.
    pub budget: usize,
    pub hops: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            budget: 64,
            hops: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub classification: bool,
    pub clustering: bool,
    pub silhouette: bool,
    pub kl_sign: KlSign,
    /// Epochs trained on classification alone before the clustering terms
    /// switch on.
    pub warmup_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            classification: true,
            clustering: true,
            silhouette: true,
            kl_sign: KlSign::Corrected,
            warmup_epochs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub scaled: bool,
    pub cross_type_scores: bool,
    pub cross_type_values: bool,
    /// Types whose scores add to the target type's; `None` means every
    /// other type.
    pub target_attends: Option<Vec<String>>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            scaled: true,
            cross_type_scores: true,
            cross_type_values: false,
            target_attends: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub sage_layers: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ffn_ratio: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub sampling: SamplingConfig,
    /// Cluster count; `None` uses the number of classes.
    pub k: Option<usize>,
    pub eps: f64,
    pub t_init: f64,
    pub loss: LossConfig,
    pub attention: AttentionConfig,
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// Independent runs with seeds `seed, seed + 1, ...` whose metrics are
    /// averaged.
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            blocks: 2,
            sage_layers: 1,
            ffn_ratio: 2,
            learning_rate: 3e-4,
            weight_decay: 5e-4,
            dropout: 0.8,
            max_epochs: 200,
            patience: 5,
            sampling: SamplingConfig::default(),
            k: None,
            eps: 1e-8,
            t_init: 1.0,
            loss: LossConfig::default(),
            attention: AttentionConfig::default(),
            kmeans_restarts: 4,
            seed: 0,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_ratio
    }

    pub fn clusters(&self, num_classes: usize) -> usize {
        self.k.unwrap_or(num_classes)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("sage_layers", self.sage_layers),
            ("ffn_ratio", self.ffn_ratio),
            ("patience", self.patience),
            ("sampling.batch_size", self.sampling.batch_size),
            ("kmeans_restarts", self.kmeans_restarts),
            ("repeats", self.repeats),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.t_init.is_finite() && self.t_init > 0.0) {
            return fail(format!("t_init must be positive, got {}", self.t_init));
        }
        if self.k.is_some_and(|k| k < 2) {
            return fail(String::from("k must be at least 2"));
        }
        let l = &self.loss;
        if !(l.classification || l.clustering || l.silhouette) {
            return fail(String::from("at least one loss term must be enabled"));
        }
        Ok(())
    }
}
