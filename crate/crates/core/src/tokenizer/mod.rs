//! Subword vocabulary training and model-input encoding.

mod encode;
mod normalize;
mod trainer;
mod vocab;

pub use encode::{
    encode_pair, encode_tagged, encode_words, pre_tokenize, EncodedPair, EncodedTagged, DEFAULT_MAX_LEN,
    IGNORE_INDEX,
};
pub use normalize::{is_arabic_diacritic, normalize_bytes, normalize_text, NormalizationProfile};
pub use trainer::train_vocab;
pub use vocab::{
    Vocabulary, CLS_ID, CONTINUATION, MASK_ID, MAX_WORD_CHARS, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: usize },
    #[error("cannot train a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocab_size {requested} is below the {required} entries needed for specials and the alphabet")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("max_len {max_len} is below the minimum of {min}")]
    MaxLenTooSmall { max_len: usize, min: usize },
    #[error("{words} words but {tags} tags")]
    Alignment { words: usize, tags: usize },
    #[error("vocabulary line {line}: {message}")]
    InvalidVocab { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TokenizerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

// io::Error is not PartialEq; compare everything else structurally.
impl PartialEq for TokenizerError {
    fn eq(&self, other: &Self) -> bool {
        use TokenizerError::*;
        match (self, other) {
            (Decode { offset: a }, Decode { offset: b }) => a == b,
            (EmptyCorpus, EmptyCorpus) => true,
            (VocabTooSmall { requested: a, required: b }, VocabTooSmall { requested: c, required: d }) => {
                a == c && b == d
            }
            (MaxLenTooSmall { max_len: a, min: b }, MaxLenTooSmall { max_len: c, min: d }) => a == c && b == d,
            (Alignment { words: a, tags: b }, Alignment { words: c, tags: d }) => a == c && b == d,
            (InvalidVocab { line: a, message: b }, InvalidVocab { line: c, message: d }) => a == c && b == d,
            (Io { path: a, .. }, Io { path: b, .. }) => a == b,
            _ => false,
        }
    }
}
