use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionError, HeadConfig};
use crate::masks::MaskRole;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Heads(#[from] AttentionError),
    #[error("{field} must be in [0, 1), got {value}")]
    RateOutOfRange { field: &'static str, value: f64 },
    #[error("{field} must be at least 1")]
    Zero { field: &'static str },
    #[error("learning_rate must be finite and non-negative, got {0}")]
    LearningRate(f64),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

/// Encoder-classifier hyperparameters. Serialized as a flat TOML table
/// with exactly these keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    /// Roles of the guided heads, in head order. `padding` marks a guided
    /// slot whose role was removed.
    pub roles: Vec<MaskRole>,
    /// Regular heads after the guided ones.
    pub extra_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_len: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            roles: MaskRole::GUIDED.to_vec(),
            extra_heads: 1,
            d_model: 24,
            d_ff: 48,
            dropout: 0.1,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            max_len: 64,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn heads(&self) -> usize {
        self.roles.len() + self.extra_heads
    }

    pub fn guided_heads(&self) -> usize {
        self.roles.len()
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            d_model: self.d_model,
            heads: self.heads(),
            guided: self.roles.clone(),
        }
    }

    /// Masks a batch must carry for this configuration.
    pub fn mask_roles(&self) -> Vec<MaskRole> {
        let mut roles = self.roles.clone();
        roles.sort();
        roles.dedup();
        roles
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.head_config().validate()?;
        for (field, value) in [
            ("d_ff", self.d_ff),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("num_classes", self.num_classes),
        ] {
            if value == 0 {
                return Err(ConfigError::Zero { field });
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::RateOutOfRange {
                field: "dropout",
                value: self.dropout,
            });
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(ConfigError::LearningRate(self.learning_rate));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses a config file; keys missing from the file take their default.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
        let defaults: toml::Table = toml::from_str(&Self::default().to_toml()).expect("default config parses");
        for (k, v) in defaults {
            table.entry(k).or_insert(v);
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }
}
