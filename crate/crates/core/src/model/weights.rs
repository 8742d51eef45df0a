use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{HeadKind, ModelConfig, INIT_STD};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Stream index used to derive head-initialization seeds.
const HEAD_STREAM: u64 = 0x4845_4144;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// The complete, ordered name -> (shape, init) table for an encoder.
pub(crate) fn encoder_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let h = c.hidden_dim;
    let mut out = vec![
        ("embeddings.token".to_string(), vec![c.vocab_size, h], Init::Normal),
        ("embeddings.position".to_string(), vec![c.max_len, h], Init::Normal),
        ("embeddings.segment".to_string(), vec![c.type_vocab, h], Init::Normal),
    ];
    for l in 0..c.layers {
        let p = format!("layer.{l}");
        for proj in ["query", "key", "value", "output"] {
            out.push((format!("{p}.attention.{proj}.weight"), vec![h, h], Init::Normal));
            out.push((format!("{p}.attention.{proj}.bias"), vec![h], Init::Zeros));
        }
        out.push((format!("{p}.attention_norm.gain"), vec![h], Init::Ones));
        out.push((format!("{p}.attention_norm.bias"), vec![h], Init::Zeros));
        out.push((format!("{p}.ffn.input.weight"), vec![h, c.ff_dim], Init::Normal));
        out.push((format!("{p}.ffn.input.bias"), vec![c.ff_dim], Init::Zeros));
        out.push((format!("{p}.ffn.output.weight"), vec![c.ff_dim, h], Init::Normal));
        out.push((format!("{p}.ffn.output.bias"), vec![h], Init::Zeros));
        out.push((format!("{p}.ffn_norm.gain"), vec![h], Init::Ones));
        out.push((format!("{p}.ffn_norm.bias"), vec![h], Init::Zeros));
    }
    out
}

fn draw(shape: Vec<usize>, init: Init, rng: &mut SplitMix64) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::filled(shape, 1.0),
        Init::Normal => {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.truncated_normal(INIT_STD)).collect();
            Tensor::new(shape, data).expect("length matches shape")
        }
    }
}

/// Named encoder arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    arrays: BTreeMap<String, Tensor>,
}

impl EncoderWeights {
    /// Draws every array in layout order from one generator.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let arrays = encoder_layout(config)
            .into_iter()
            .map(|(name, shape, init)| (name, draw(shape, init, &mut rng)))
            .collect();
        EncoderWeights { arrays }
    }

    pub(crate) fn from_arrays(arrays: BTreeMap<String, Tensor>) -> Self {
        EncoderWeights { arrays }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.get(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.arrays.iter_mut()
    }

    /// Hex SHA-256 over names, shapes and little-endian values, in name order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.arrays {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// A linear task head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub kind: HeadKind,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl TaskHead {
    pub fn output_dim(kind: HeadKind, config: &ModelConfig) -> usize {
        match kind {
            HeadKind::NerToken => config.num_ner_tags,
            HeadKind::Cls => config.num_classes,
        }
    }

    /// Fresh head; the seed is mixed with a head-specific stream so it
    /// never replays the encoder's draws.
    pub fn init(kind: HeadKind, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(derive_seed(seed, HEAD_STREAM));
        let out = Self::output_dim(kind, config);
        TaskHead {
            kind,
            weight: draw(vec![config.hidden_dim, out], Init::Normal, &mut rng),
            bias: Tensor::zeros(vec![out]),
        }
    }

    /// Hex SHA-256 over kind, shapes and values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.to_string().as_bytes());
        for t in [&self.weight, &self.bias] {
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn weight_name(&self) -> &'static str {
        match self.kind {
            HeadKind::NerToken => "head.ner.weight",
            HeadKind::Cls => "head.cls.weight",
        }
    }

    pub fn bias_name(&self) -> &'static str {
        match self.kind {
            HeadKind::NerToken => "head.ner.bias",
            HeadKind::Cls => "head.cls.bias",
        }
    }
}
