use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NliExample;

/// Nearest-rank quantiles of a length distribution, in whitespace words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LengthQuantiles {
    pub min: usize,
    pub p25: usize,
    pub median: usize,
    pub p75: usize,
    pub max: usize,
}

impl LengthQuantiles {
    fn from_lengths(mut lens: Vec<usize>) -> Self {
        if lens.is_empty() {
            return Self::default();
        }
        lens.sort_unstable();
        let rank = |q: f64| {
            let r = (q * lens.len() as f64).ceil() as usize;
            lens[r.clamp(1, lens.len()) - 1]
        };
        LengthQuantiles {
            min: lens[0],
            p25: rank(0.25),
            median: rank(0.5),
            p75: rank(0.75),
            max: lens[lens.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    /// Counts for entailment, neutral, contradiction.
    pub per_label: [usize; 3],
    pub per_source: BTreeMap<String, usize>,
    pub premise_words: LengthQuantiles,
    pub hypothesis_words: LengthQuantiles,
}

pub fn corpus_stats(examples: &[NliExample]) -> CorpusStats {
    let mut stats = CorpusStats {
        total: examples.len(),
        ..Default::default()
    };
    for ex in examples {
        stats.per_label[ex.label.value() as usize] += 1;
        *stats.per_source.entry(ex.source.to_string()).or_insert(0) += 1;
    }
    let words = |s: &str| s.split_whitespace().count();
    stats.premise_words = LengthQuantiles::from_lengths(examples.iter().map(|e| words(&e.premise)).collect());
    stats.hypothesis_words = LengthQuantiles::from_lengths(examples.iter().map(|e| words(&e.hypothesis)).collect());
    stats
}
