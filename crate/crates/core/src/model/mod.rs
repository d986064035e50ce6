//! Encoder-classifier: token + sinusoidal embeddings, a stack of guided
//! multi-head layers, masked-mean pooling, and a linear classifier, with
//! Adam training and a checksummed checkpoint format.

mod checkpoint;
mod config;
mod forward;
mod optim;
mod params;
mod train;

pub use config::{ConfigError, ModelConfig};
pub use forward::{
    classify, embed, encoder_forward, example_on_tape, forward_example, positional_encoding,
    AttentionTrace, ExampleVars,
};
pub use optim::Adam;
pub use params::{ParamVars, Params};
pub use train::{
    batch_gradients, batch_loss, evaluate, score_examples, train, EpochMetrics, Metrics,
};

use std::path::Path;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::corpus::{CorpusError, Vocabulary};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("vocabulary hash mismatch: expected {expected}, found {actual}")]
    VocabularyHash { expected: String, actual: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("sentence {0} has no label")]
    MissingLabel(String),
    #[error("sentence {id} has label {label} but the model has {num_classes} classes")]
    LabelOutOfRange {
        id: String,
        label: usize,
        num_classes: usize,
    },
    #[error("parameter {0} is missing")]
    MissingParameter(String),
    #[error(
        "non-finite value at epoch {epoch}, batch {batch}: tape node {node} ({op}{}) with shape {shape:?}",
        param.as_deref().map(|p| format!(" {p}")).unwrap_or_default()
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        node: usize,
        op: &'static str,
        /// Set when the offending node is a parameter.
        param: Option<String>,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl ModelError {
    pub(crate) fn at(self, epoch: usize, batch: usize) -> Self {
        match self {
            ModelError::NonFinite {
                node,
                op,
                param,
                shape,
                ..
            } => ModelError::NonFinite {
                epoch,
                batch,
                node,
                op,
                param,
                shape,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainMetadata {
    pub seed: u64,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochMetrics>,
}

/// A trained model: configuration, vocabulary, parameters, and history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Hash of the training vocabulary, checked on load.
    pub vocab_hash: String,
    pub params: Params,
    pub meta: TrainMetadata,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        checkpoint::from_bytes(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
