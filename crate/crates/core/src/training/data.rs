use super::{Objective, TrainError};
use crate::corpus::{NerSentence, NliExample, Task};
use crate::model::{Batch, ModelError};
use crate::tokenizer::{encode_pair, encode_tagged, EncodedPair, EncodedTagged, Vocabulary, IGNORE_INDEX};

/// Encoded examples for one phase.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Classification {
        inputs: Vec<EncodedPair>,
        labels: Vec<usize>,
        num_classes: usize,
    },
    Tagging(Vec<EncodedTagged>),
}

impl Dataset {
    /// Encodes NLI pairs; for `Task::Cd` labels are collapsed to binary.
    pub fn from_examples(
        examples: &[NliExample],
        task: Task,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self, TrainError> {
        let mut inputs = Vec::with_capacity(examples.len());
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            inputs.push(
                encode_pair(&ex.premise, &ex.hypothesis, vocab, max_len)
                    .map_err(|e| TrainError::Data(e.to_string()))?,
            );
            labels.push(task.class_of(ex.label));
        }
        Ok(Dataset::Classification {
            inputs,
            labels,
            num_classes: task.num_classes(),
        })
    }

    pub fn from_sentences(sentences: &[NerSentence], vocab: &Vocabulary, max_len: usize) -> Result<Self, TrainError> {
        sentences
            .iter()
            .map(|s| encode_tagged(s, vocab, max_len).map_err(|e| TrainError::Data(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
            .map(Dataset::Tagging)
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Classification { inputs, .. } => inputs.len(),
            Dataset::Tagging(items) => items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fits(&self, objective: Objective) -> bool {
        match (self, objective) {
            (Dataset::Tagging(_), Objective::Ner) => true,
            (Dataset::Classification { num_classes, .. }, Objective::Nli) => *num_classes == 3,
            (Dataset::Classification { num_classes, .. }, Objective::Cd) => *num_classes == 2,
            _ => false,
        }
    }

    /// Model batch for the given item indices, with per-item class labels
    /// (empty for tagging data, whose targets ride inside the batch).
    pub fn batch(&self, idx: &[usize]) -> Result<(Batch, Vec<usize>), ModelError> {
        match self {
            Dataset::Classification { inputs, labels, .. } => Ok((
                Batch::from_pairs(idx.iter().map(|&i| &inputs[i]))?,
                idx.iter().map(|&i| labels[i]).collect(),
            )),
            Dataset::Tagging(items) => Ok((Batch::from_tagged(idx.iter().map(|&i| &items[i]))?, Vec::new())),
        }
    }

    /// Gold targets of a batch in prediction order, `IGNORE_INDEX` where unscored.
    pub(crate) fn targets(batch: &Batch, class_labels: &[usize]) -> Vec<usize> {
        match &batch.tag_labels {
            Some(tags) => tags.clone(),
            None => class_labels.to_vec(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::Classification { num_classes, .. } => *num_classes,
            Dataset::Tagging(_) => crate::corpus::NUM_NER_TAGS,
        }
    }
}

pub(crate) fn scored(targets: &[usize]) -> Vec<bool> {
    targets.iter().map(|&t| t != IGNORE_INDEX).collect()
}
