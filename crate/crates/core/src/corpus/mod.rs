//! NLI and NER corpus ingestion, label mapping, and seeded splitting.

mod ner;
mod sources;
mod split;
mod stats;
mod unified;

pub use ner::{
    parse_anercorp, parse_anercorp_str, AnerParse, EntityType, NerSentence, NerTag, NUM_NER_TAGS,
};
pub use sources::{ingest_reader, ingest_source, ColumnMap, IngestOptions, IngestReport};
pub use split::{merge_and_split, split_sizes, CorpusSplits, SplitManifest, SPLIT_RATIOS};
pub use stats::{corpus_stats, CorpusStats, LengthQuantiles};
pub use unified::{read_unified, read_unified_str, unified_digest, write_unified, write_unified_string};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown source format {0:?} (expected xnli, snli_ar or arnli)")]
    UnknownFormat(String),
    #[error("{source_name}: {dropped} of {total} rows dropped, source looks corrupt")]
    CorruptSource {
        source_name: String,
        dropped: usize,
        total: usize,
    },
    #[error("{source_name}: no column among {candidates:?} in header")]
    MissingColumn {
        source_name: String,
        candidates: Vec<String>,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: tag {tag} follows {previous:?}, which breaks IOB")]
    IobViolation {
        line: usize,
        tag: String,
        previous: Option<String>,
    },
    #[error("{words} words but {tags} tags")]
    Alignment { words: usize, tags: usize },
    #[error("cannot split an empty corpus")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Three-way inference label: 0 entailment, 1 neutral, 2 contradiction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct NliLabel(u8);

impl NliLabel {
    pub const ENTAILMENT: NliLabel = NliLabel(0);
    pub const NEUTRAL: NliLabel = NliLabel(1);
    pub const CONTRADICTION: NliLabel = NliLabel(2);

    pub fn new(value: u8) -> Option<NliLabel> {
        (value < 3).then_some(NliLabel(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Maps a source label spelling (textual or numeric) to the unified ids.
    pub fn from_source_text(raw: &str) -> Option<NliLabel> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "0" | "entailment" | "entails" | "entail" | "e" => Some(NliLabel::ENTAILMENT),
            "1" | "neutral" | "n" => Some(NliLabel::NEUTRAL),
            "2" | "contradiction" | "contradicts" | "contradict" | "c" => Some(NliLabel::CONTRADICTION),
            _ => None,
        }
    }
}

impl TryFrom<u8> for NliLabel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        NliLabel::new(v).ok_or_else(|| format!("label {v} outside 0..=2"))
    }
}

impl From<NliLabel> for u8 {
    fn from(l: NliLabel) -> u8 {
        l.0
    }
}

/// Collapses the three-way label to contradiction-vs-not:
/// entailment and neutral become 0, contradiction becomes 1.
pub fn map_to_cd(label: NliLabel) -> u8 {
    match label.0 {
        2 => 1,
        _ => 0,
    }
}

/// Downstream classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Nli,
    Cd,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Nli => 3,
            Task::Cd => 2,
        }
    }

    pub fn class_of(self, label: NliLabel) -> usize {
        match self {
            Task::Nli => label.value() as usize,
            Task::Cd => map_to_cd(label) as usize,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Nli => "nli",
            Task::Cd => "cd",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nli" => Ok(Task::Nli),
            "cd" => Ok(Task::Cd),
            other => Err(format!("unknown task {other:?} (expected nli or cd)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "xnli")]
    Xnli,
    #[serde(rename = "snli_ar")]
    SnliAr,
    #[serde(rename = "arnli")]
    Arnli,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Xnli, Source::SnliAr, Source::Arnli];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Xnli => "xnli",
            Source::SnliAr => "snli_ar",
            Source::Arnli => "arnli",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xnli" => Ok(Source::Xnli),
            "snli_ar" => Ok(Source::SnliAr),
            "arnli" => Ok(Source::Arnli),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// One premise/hypothesis pair in the unified schema. Field order here is
/// the field order of the unified corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NliExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
    pub premise_en: Option<String>,
    pub hypothesis_en: Option<String>,
    pub source: Source,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cd_mapping() {
        assert_eq!(map_to_cd(NliLabel::ENTAILMENT), 0);
        assert_eq!(map_to_cd(NliLabel::NEUTRAL), 0);
        assert_eq!(map_to_cd(NliLabel::CONTRADICTION), 1);
        assert_eq!(Task::Cd.class_of(NliLabel::CONTRADICTION), 1);
        assert_eq!(Task::Nli.class_of(NliLabel::NEUTRAL), 1);
    }

    #[test]
    fn label_spellings() {
        assert_eq!(NliLabel::from_source_text("contradiction"), Some(NliLabel::CONTRADICTION));
        assert_eq!(NliLabel::from_source_text(" Entailment "), Some(NliLabel::ENTAILMENT));
        assert_eq!(NliLabel::from_source_text("1"), Some(NliLabel::NEUTRAL));
        assert_eq!(NliLabel::from_source_text("-"), None);
        assert_eq!(NliLabel::from_source_text("3"), None);
        assert!(NliLabel::new(3).is_none());
    }

    #[test]
    fn unknown_format_is_a_format_error() {
        assert!(matches!("mnli".parse::<Source>(), Err(CorpusError::UnknownFormat(_))));
        assert_eq!("snli_ar".parse::<Source>().unwrap(), Source::SnliAr);
    }
}
