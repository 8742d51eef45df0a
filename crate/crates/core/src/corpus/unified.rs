//! The unified corpus file: one JSON object per line with fields in the
//! order premise, hypothesis, label, premise_en, hypothesis_en, source.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CorpusError, NliExample};
use crate::tokenizer::{normalize_text, NormalizationProfile};

pub fn write_unified<W: Write>(examples: &[NliExample], mut out: W) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_unified_string(examples: &[NliExample]) -> String {
    let mut buf = Vec::new();
    write_unified(examples, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Hex SHA-256 of the unified serialization.
pub fn unified_digest(examples: &[NliExample]) -> String {
    hex::encode(Sha256::digest(write_unified_string(examples).as_bytes()))
}

/// Strict reader: any malformed line is an error, and stored text is
/// re-normalized, so reading what [`write_unified`] produced is lossless.
pub fn read_unified_str(text: &str) -> Result<Vec<NliExample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut ex: NliExample = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.premise = normalize_text(&ex.premise, &NormalizationProfile::CORPUS);
        ex.hypothesis = normalize_text(&ex.hypothesis, &NormalizationProfile::CORPUS);
        if ex.premise.is_empty() || ex.hypothesis.is_empty() {
            return Err(CorpusError::Parse {
                line: i + 1,
                message: "empty premise or hypothesis".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn read_unified(path: &Path) -> Result<Vec<NliExample>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    read_unified_str(&text)
}
