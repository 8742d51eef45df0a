use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NUM_NER_TAGS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{preds} predictions but {labels} labels")]
    Length { preds: usize, labels: usize },
    #[error("no items to evaluate")]
    Empty,
    #[error("class id {id} at position {index} is not below {classes}")]
    Class { index: usize, id: usize, classes: usize },
}

fn check(preds: &[usize], labels: &[usize]) -> Result<(), MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Fraction of positions where prediction equals label.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, MetricError> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// F1 of class `c`; a class with no true and no predicted items scores 0.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.counts[c][c];
        let true_count: u64 = self.counts[c].iter().sum();
        let pred_count: u64 = self.counts.iter().map(|row| row[c]).sum();
        // 2PR/(P+R) simplifies to 2tp/(true+pred) whenever it is defined
        if true_count + pred_count == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (true_count + pred_count) as f64
        }
    }

    pub fn macro_f1(&self) -> f64 {
        let n = self.num_classes();
        (0..n).map(|c| self.class_f1(c)).sum::<f64>() / n as f64
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix, MetricError> {
    check(preds, labels)?;
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (index, (&p, &l)) in preds.iter().zip(labels).enumerate() {
        for id in [p, l] {
            if id >= num_classes {
                return Err(MetricError::Class {
                    index,
                    id,
                    classes: num_classes,
                });
            }
        }
        counts[l][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Unweighted mean of per-class F1 over all `num_classes` classes.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64, MetricError> {
    Ok(confusion(preds, labels, num_classes)?.macro_f1())
}

/// Accuracy and macro-F1 for one classification split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn class_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassMetrics, MetricError> {
    let cm = confusion(preds, labels, num_classes)?;
    Ok(ClassMetrics {
        accuracy: cm.accuracy(),
        macro_f1: cm.macro_f1(),
    })
}

/// Token-level tag accuracy and 9-class macro-F1 over unmasked positions.
pub fn ner_metrics(pred_tags: &[usize], true_tags: &[usize], loss_mask: &[bool]) -> Result<ClassMetrics, MetricError> {
    check(pred_tags, true_tags)?;
    if loss_mask.len() != true_tags.len() {
        return Err(MetricError::Length {
            preds: loss_mask.len(),
            labels: true_tags.len(),
        });
    }
    let (mut p, mut l) = (Vec::new(), Vec::new());
    for i in (0..true_tags.len()).filter(|&i| loss_mask[i]) {
        p.push(pred_tags[i]);
        l.push(true_tags[i]);
    }
    class_metrics(&p, &l, NUM_NER_TAGS)
}
