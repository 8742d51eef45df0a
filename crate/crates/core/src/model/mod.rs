//! Toy BERT-style encoder with a swappable task head.

mod checkpoint;
mod encoder;
mod weights;

pub use checkpoint::{ArrayEntry, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{argmax_last, Batch, Bindings, EncoderOutput, Mode};
pub use weights::{EncoderWeights, TaskHead};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NUM_NER_TAGS;
use crate::tensor::TensorError;

/// Epsilon inside every layernorm square root.
pub const LAYER_NORM_EPS: f64 = 1e-12;
/// Std of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    Vocabulary { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("no task head is attached")]
    DetachedHead,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear `hidden -> 9` applied at every position.
    NerToken,
    /// Linear `hidden -> num_classes` applied at position 0.
    Cls,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::NerToken => "ner_token_head",
            HeadKind::Cls => "cls_head",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub type_vocab: usize,
    pub dropout_p: f64,
    pub num_ner_tags: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            hidden_dim: 128,
            ff_dim: 512,
            vocab_size: 8000,
            max_len: 128,
            type_vocab: 2,
            dropout_p: 0.1,
            num_ner_tags: NUM_NER_TAGS,
            num_classes: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.heads == 0 || self.hidden_dim == 0 {
            return fail("heads and hidden_dim must be positive".into());
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::SPECIAL_TOKENS.len() {
            return fail(format!("vocab_size {} leaves no room past the specials", self.vocab_size));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} is below 3", self.max_len));
        }
        if self.type_vocab != 2 {
            return fail(format!("type_vocab must be 2, got {}", self.type_vocab));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} is outside [0, 1)", self.dropout_p));
        }
        if self.num_ner_tags != NUM_NER_TAGS {
            return fail(format!("num_ner_tags must be {NUM_NER_TAGS}, got {}", self.num_ner_tags));
        }
        if !(2..=3).contains(&self.num_classes) {
            return fail(format!("num_classes must be 2 or 3, got {}", self.num_classes));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Encoder weights plus at most one attached head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: EncoderWeights,
    head: Option<TaskHead>,
}

impl Model {
    /// Fresh encoder from `seed` with a head of the given kind.
    pub fn init(config: ModelConfig, seed: u64, head: HeadKind) -> Result<Self, ModelError> {
        config.validate()?;
        let encoder = EncoderWeights::init(&config, seed);
        let head = TaskHead::init(head, &config, seed);
        Ok(Model {
            config,
            encoder,
            head: Some(head),
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, encoder: EncoderWeights, head: Option<TaskHead>) -> Self {
        Model { config, encoder, head }
    }

    pub fn head(&self) -> Option<&TaskHead> {
        self.head.as_ref()
    }

    pub fn head_kind(&self) -> Option<HeadKind> {
        self.head.as_ref().map(|h| h.kind)
    }

    /// Removes and returns the attached head.
    pub fn detach_head(&mut self) -> Option<TaskHead> {
        self.head.take()
    }

    /// Discards the current head and attaches a fresh one seeded from `seed`.
    /// Encoder arrays are not touched.
    pub fn swap_head(&mut self, kind: HeadKind, seed: u64) {
        self.head = Some(TaskHead::init(kind, &self.config, seed));
    }

    pub fn encoder_digest(&self) -> String {
        self.encoder.digest()
    }

    /// Every trainable array, encoder first, then the head.
    pub fn params(&self) -> Vec<(&str, &crate::tensor::Tensor)> {
        let mut out: Vec<(&str, &crate::tensor::Tensor)> =
            self.encoder.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if let Some(h) = &self.head {
            out.push((h.weight_name(), &h.weight));
            out.push((h.bias_name(), &h.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&str, &mut crate::tensor::Tensor)> {
        let mut out: Vec<(&str, &mut crate::tensor::Tensor)> =
            self.encoder.iter_mut().map(|(n, t)| (n.as_str(), t)).collect();
        if let Some(h) = &mut self.head {
            let (wn, bn) = (h.weight_name(), h.bias_name());
            out.push((wn, &mut h.weight));
            out.push((bn, &mut h.bias));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }
}
