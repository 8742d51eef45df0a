use std::collections::BTreeMap;

use super::{HeadKind, Model, ModelError, LAYER_NORM_EPS};
use crate::rng::SplitMix64;
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{EncodedPair, EncodedTagged, IGNORE_INDEX, PAD_ID};

/// Dropout is live only in `Train`; the seed drives every mask of one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

/// A padded `[batch, seq]` block of model inputs.
///
/// `seq` is the longest real length in the batch, not the encoder's
/// `max_len`; trailing all-padding columns are never computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// True for real tokens.
    pub key_mask: Vec<bool>,
    /// Per-position tag targets for tagged batches; `IGNORE_INDEX` elsewhere.
    pub tag_labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn from_pairs<'a>(items: impl IntoIterator<Item = &'a EncodedPair>) -> Result<Self, ModelError> {
        let items: Vec<&EncodedPair> = items.into_iter().collect();
        let seq = items.iter().map(|p| p.real_len()).max().ok_or(ModelError::EmptyBatch)?;
        let mut b = Batch::with_capacity(items.len(), seq);
        for p in &items {
            for t in 0..seq {
                b.token_ids.push(p.token_ids.get(t).map_or(PAD_ID as usize, |&v| v as usize));
                b.segment_ids.push(p.segment_ids.get(t).map_or(0, |&v| v as usize));
                b.key_mask.push(p.attention_mask.get(t) == Some(&1));
            }
        }
        Ok(b)
    }

    pub fn from_tagged<'a>(items: impl IntoIterator<Item = &'a EncodedTagged>) -> Result<Self, ModelError> {
        let items: Vec<&EncodedTagged> = items.into_iter().collect();
        let seq = items.iter().map(|e| e.len()).max().ok_or(ModelError::EmptyBatch)?;
        let mut b = Batch::with_capacity(items.len(), seq);
        let mut labels = Vec::with_capacity(items.len() * seq);
        for e in &items {
            for t in 0..seq {
                let real = t < e.len();
                b.token_ids.push(if real { e.token_ids[t] as usize } else { PAD_ID as usize });
                b.segment_ids.push(0);
                b.key_mask.push(real);
                labels.push(if real { e.tag_ids[t] } else { IGNORE_INDEX });
            }
        }
        b.tag_labels = Some(labels);
        Ok(b)
    }

    fn with_capacity(batch: usize, seq: usize) -> Self {
        Batch {
            batch,
            seq,
            token_ids: Vec::with_capacity(batch * seq),
            segment_ids: Vec::with_capacity(batch * seq),
            key_mask: Vec::with_capacity(batch * seq),
            tag_labels: None,
        }
    }
}

/// Tape handles for every parameter of one forward pass.
#[derive(Debug, Clone)]
pub struct Bindings {
    pub encoder: BTreeMap<String, Var>,
    pub head: Option<(HeadKind, Var, Var)>,
}

impl Bindings {
    fn get(&self, name: &str) -> Var {
        self.encoder[name]
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Final hidden states, `[batch, seq, hidden]`.
    pub hidden: Var,
    pub batch: usize,
    pub seq: usize,
    /// Post-softmax attention per layer, `[batch*heads, seq, seq]`.
    pub attention: Vec<Var>,
}

impl Model {
    /// Registers every array on the tape, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let mut record = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let encoder = self.encoder.iter().map(|(n, t)| (n.clone(), record(t))).collect();
        let head = self
            .head()
            .map(|h| (h.kind, record(&h.weight), record(&h.bias)));
        Bindings { encoder, head }
    }

    /// Moves leaf gradients off the tape into each array's `grad` buffer.
    pub fn accumulate_grads(&mut self, tape: &mut Tape, bindings: &Bindings) {
        for (name, t) in self.encoder.iter_mut() {
            if let Some(g) = tape.take_grad(bindings.encoder[name]) {
                t.accumulate_grad(&g);
            }
        }
        if let (Some(h), Some((_, w, b))) = (self.head.as_mut(), bindings.head) {
            if let Some(g) = tape.take_grad(w) {
                h.weight.accumulate_grad(&g);
            }
            if let Some(g) = tape.take_grad(b) {
                h.bias.accumulate_grad(&g);
            }
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        if batch.seq > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: batch.seq,
                max_len: self.config.max_len,
            });
        }
        if let Some(&id) = batch.token_ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ModelError::Vocabulary {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        if let Some(&s) = batch.segment_ids.iter().find(|&&s| s >= self.config.type_vocab) {
            return Err(ModelError::Config(format!("segment id {s} outside type_vocab")));
        }
        Ok(())
    }

    /// Runs the encoder stack over `batch`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bindings: &Bindings,
        batch: &Batch,
        mode: Mode,
    ) -> Result<EncoderOutput, ModelError> {
        self.check_batch(batch)?;
        let c = &self.config;
        let (bsz, seq, heads) = (batch.batch, batch.seq, c.heads);
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(SplitMix64::new(dropout_seed)),
            Mode::Eval => None,
        };
        let mut drop = |tape: &mut Tape, x: Var| match rng.as_mut() {
            Some(r) => tape.dropout(x, c.dropout_p, r),
            None => x,
        };

        let positions: Vec<usize> = (0..bsz).flat_map(|_| 0..seq).collect();
        let tok = tape.gather_rows(bindings.get("embeddings.token"), &batch.token_ids)?;
        let pos = tape.gather_rows(bindings.get("embeddings.position"), &positions)?;
        let seg = tape.gather_rows(bindings.get("embeddings.segment"), &batch.segment_ids)?;
        let x = tape.add(tok, pos)?;
        let x = tape.add(x, seg)?;
        let mut x = drop(tape, x);

        let scale = 1.0 / (c.head_dim() as f64).sqrt();
        let mut attention = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = |s: &str| bindings.get(&format!("layer.{l}.{s}"));
            let linear = |tape: &mut Tape, x: Var, name: &str| -> Result<Var, ModelError> {
                let y = tape.matmul(x, p(&format!("{name}.weight")))?;
                Ok(tape.add_bias(y, p(&format!("{name}.bias")))?)
            };

            let q = linear(tape, x, "attention.query")?;
            let k = linear(tape, x, "attention.key")?;
            let v = linear(tape, x, "attention.value")?;
            let q = tape.split_heads(q, bsz, seq, heads)?;
            let k = tape.split_heads(k, bsz, seq, heads)?;
            let v = tape.split_heads(v, bsz, seq, heads)?;
            let scores = tape.batch_matmul(q, k, true)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.mask_keys(scores, &batch.key_mask, heads)?;
            let probs = tape.softmax(scores, 2)?;
            attention.push(probs);
            let ctx = tape.batch_matmul(probs, v, false)?;
            let ctx = tape.merge_heads(ctx, bsz, seq, heads)?;
            let out = linear(tape, ctx, "attention.output")?;
            let out = drop(tape, out);
            let res = tape.add(x, out)?;
            let h = tape.layernorm(res, p("attention_norm.gain"), p("attention_norm.bias"), LAYER_NORM_EPS)?;

            let f = linear(tape, h, "ffn.input")?;
            let f = tape.gelu(f);
            let f = linear(tape, f, "ffn.output")?;
            let f = drop(tape, f);
            let res = tape.add(h, f)?;
            x = tape.layernorm(res, p("ffn_norm.gain"), p("ffn_norm.bias"), LAYER_NORM_EPS)?;
        }
        let hidden = tape.reshape(x, vec![bsz, seq, c.hidden_dim])?;
        Ok(EncoderOutput {
            hidden,
            batch: bsz,
            seq,
            attention,
        })
    }

    /// Head output: `[B, T, tags]` for the token head, `[B, classes]` from
    /// position 0 for the CLS head.
    pub fn task_logits(
        &self,
        tape: &mut Tape,
        bindings: &Bindings,
        out: &EncoderOutput,
    ) -> Result<Var, ModelError> {
        let (kind, w, b) = bindings.head.ok_or(ModelError::DetachedHead)?;
        let (bsz, seq) = (out.batch, out.seq);
        let flat = tape.reshape(out.hidden, vec![bsz * seq, self.config.hidden_dim])?;
        match kind {
            HeadKind::Cls => {
                let cls_rows: Vec<usize> = (0..bsz).map(|i| i * seq).collect();
                let cls = tape.gather_rows(flat, &cls_rows)?;
                let y = tape.matmul(cls, w)?;
                Ok(tape.add_bias(y, b)?)
            }
            HeadKind::NerToken => {
                let y = tape.matmul(flat, w)?;
                let y = tape.add_bias(y, b)?;
                let tags = tape.shape(w)[1];
                Ok(tape.reshape(y, vec![bsz, seq, tags])?)
            }
        }
    }

    /// Mean cross-entropy of head logits against targets: one label per
    /// item for the CLS head, the batch's `tag_labels` for the token head.
    pub fn task_loss(
        &self,
        tape: &mut Tape,
        logits: Var,
        batch: &Batch,
        class_labels: &[usize],
    ) -> Result<Var, ModelError> {
        let shape = tape.shape(logits).to_vec();
        if shape.len() == 3 {
            let labels = batch
                .tag_labels
                .as_deref()
                .ok_or_else(|| ModelError::Config("token head needs a tagged batch".into()))?;
            let flat = tape.reshape(logits, vec![shape[0] * shape[1], shape[2]])?;
            Ok(tape.cross_entropy(flat, labels, IGNORE_INDEX)?)
        } else {
            Ok(tape.cross_entropy(logits, class_labels, IGNORE_INDEX)?)
        }
    }

    /// Eval-mode logits as a plain tensor.
    pub fn predict_logits(&self, batch: &Batch) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bindings = self.bind(&mut tape, false);
        let out = self.encode(&mut tape, &bindings, batch, Mode::Eval)?;
        let logits = self.task_logits(&mut tape, &bindings, &out)?;
        Ok(tape.value(logits).clone())
    }
}

/// Row-wise argmax of a 2-D or 3-D logits tensor over its last axis;
/// ties go to the lowest index.
pub fn argmax_last(logits: &Tensor) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap_or(&1);
    if classes == 0 {
        return Vec::new();
    }
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
