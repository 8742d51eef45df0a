use serde::{Deserialize, Serialize};

use super::unified::unified_digest;
use super::{CorpusError, NliExample};
use crate::rng::SplitMix64;

/// Train / test / validation proportions.
pub const SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// `(floor(0.6 n), floor(0.2 n), remainder)`, computed in integers.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 5;
    let test = n / 5;
    (train, test, n - train - test)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<NliExample>,
    pub test: Vec<NliExample>,
    pub validation: Vec<NliExample>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDigests {
    pub train: String,
    pub test: String,
    pub validation: String,
}

/// Record of how a corpus was split, with a content digest per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub counts: SplitCounts,
    pub digests: SplitDigests,
}

impl CorpusSplits {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            ratios: SPLIT_RATIOS,
            counts: SplitCounts {
                train: self.train.len(),
                test: self.test.len(),
                validation: self.validation.len(),
            },
            digests: SplitDigests {
                train: unified_digest(&self.train),
                test: unified_digest(&self.test),
                validation: unified_digest(&self.validation),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded Fisher-Yates shuffle, then consecutive train/test/validation slices.
pub fn merge_and_split(mut examples: Vec<NliExample>, seed: u64) -> Result<CorpusSplits, CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    SplitMix64::new(seed).shuffle(&mut examples);
    let (n_train, n_test, _) = split_sizes(examples.len());
    let validation = examples.split_off(n_train + n_test);
    let test = examples.split_off(n_train);
    Ok(CorpusSplits {
        train: examples,
        test,
        validation,
        seed,
    })
}
