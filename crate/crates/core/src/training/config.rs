use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConceptLossKind, LossConfig, OptimizerConfig};
use crate::error::{Error, Result};

/// Training settings, readable from TOML or JSON. Missing keys take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub concept_loss: ConceptLossKind,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs during which only concept parameters are updated.
    pub stage_epochs: usize,
    pub seed: u64,
    /// Sum per-example gradients in index order.
    pub deterministic: bool,
    pub rms_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Decode threshold for the held-out accuracies in the epoch log.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            lambda: 5.0,
            concept_loss: ConceptLossKind::BinaryCrossEntropy,
            lr: o.lr,
            batch: 64,
            epochs: 20,
            stage_epochs: 2,
            seed: 0,
            deterministic: true,
            rms_decay: o.rms_decay,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            lr_decay: o.lr_decay,
            lr_decay_every: o.lr_decay_every,
            threshold: crate::decoder::DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda, concept_loss: self.concept_loss }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr: self.lr,
            rms_decay: self.rms_decay,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        self.optimizer().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// JSON if the extension is `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = TrainConfig::from_toml("lambda = 0\nepochs = 3\nconcept_loss = \"mse\"\n").unwrap();
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.concept_loss, ConceptLossKind::MeanSquaredError);
        assert_eq!(cfg.batch, 64);
        assert_eq!(cfg.stage_epochs, 2);
    }

    #[test]
    fn json_and_errors() {
        let cfg = TrainConfig::from_json(r#"{"seed": 7, "deterministic": false}"#).unwrap();
        assert_eq!((cfg.seed, cfg.deterministic), (7, false));
        assert!(TrainConfig::from_toml("lr = -1").is_err());
        assert!(TrainConfig::from_toml("learning_rate = 0.1").is_err());
        assert!(TrainConfig::from_json(r#"{"lambda": -2}"#).is_err());
    }
}
