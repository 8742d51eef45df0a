//! Readers for the three NLI source layouts.
//!
//! * `xnli`: tab-separated with a header row, unquoted (the XNLI release
//!   layout). When a `language` column exists only `ar` rows are kept.
//! * `snli_ar`: one JSON object per line.
//! * `arnli`: comma-separated with a header row and standard CSV quoting.
//!
//! Column names are resolved through a [`ColumnMap`], which lists accepted
//! aliases per field and can be overridden from configuration.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, NliExample, NliLabel, Source};
use crate::tokenizer::{normalize_text, NormalizationProfile};

/// Accepted column (or JSON key) names for each unified field, first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Vec<String>,
    pub premise_en: Vec<String>,
    pub hypothesis_en: Vec<String>,
    pub language: Vec<String>,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            premise: names(&["premise", "sentence1"]),
            hypothesis: names(&["hypothesis", "sentence2"]),
            label: names(&["label", "gold_label"]),
            premise_en: names(&["premise_en", "sentence1_en"]),
            hypothesis_en: names(&["hypothesis_en", "sentence2_en"]),
            language: names(&["language", "lang"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    pub profile: NormalizationProfile,
    /// Value of the language column to keep, when that column exists.
    pub language: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            columns: ColumnMap::default(),
            profile: NormalizationProfile::CORPUS,
            language: "ar".to_string(),
        }
    }
}

/// Ingested examples plus bookkeeping on what was discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub examples: Vec<NliExample>,
    /// Data rows seen, excluding the header and language-filtered rows.
    pub rows: usize,
    /// Rows with missing text, an unmappable label, or a malformed record.
    pub dropped: usize,
    /// Rows skipped by the language filter; not counted as drops.
    pub filtered: usize,
}

struct RawRow {
    premise: Option<String>,
    hypothesis: Option<String>,
    label: Option<String>,
    premise_en: Option<String>,
    hypothesis_en: Option<String>,
    language: Option<String>,
}

fn english(raw: Option<String>) -> Option<String> {
    let profile = NormalizationProfile {
        remove_tatweel: false,
        remove_diacritics: false,
        collapse_whitespace: true,
    };
    raw.map(|s| normalize_text(&s, &profile)).filter(|s| !s.is_empty())
}

fn to_example(row: RawRow, source: Source, opts: &IngestOptions) -> Option<NliExample> {
    let premise = normalize_text(row.premise.as_deref()?, &opts.profile);
    let hypothesis = normalize_text(row.hypothesis.as_deref()?, &opts.profile);
    if premise.is_empty() || hypothesis.is_empty() {
        return None;
    }
    let label = NliLabel::from_source_text(row.label.as_deref()?)?;
    Some(NliExample {
        premise,
        hypothesis,
        label,
        premise_en: english(row.premise_en),
        hypothesis_en: english(row.hypothesis_en),
        source,
    })
}

struct Tally<'a> {
    source: Source,
    opts: &'a IngestOptions,
    report: IngestReport,
}

impl Tally<'_> {
    fn malformed(&mut self) {
        self.report.rows += 1;
        self.report.dropped += 1;
    }

    fn row(&mut self, row: RawRow) {
        if let Some(lang) = &row.language {
            if !lang.trim().eq_ignore_ascii_case(&self.opts.language) {
                self.report.filtered += 1;
                return;
            }
        }
        self.report.rows += 1;
        match to_example(row, self.source, self.opts) {
            Some(ex) => self.report.examples.push(ex),
            None => self.report.dropped += 1,
        }
    }

    fn finish(self) -> Result<IngestReport, CorpusError> {
        let r = self.report;
        if r.dropped * 2 > r.rows {
            return Err(CorpusError::CorruptSource {
                source_name: self.source.to_string(),
                dropped: r.dropped,
                total: r.rows,
            });
        }
        Ok(r)
    }
}

fn find_column(header: &csv::StringRecord, candidates: &[String]) -> Option<usize> {
    candidates
        .iter()
        .find_map(|c| header.iter().position(|h| h.trim().trim_start_matches('\u{feff}') == c))
}

fn ingest_delimited<R: Read>(reader: R, delimiter: u8, quoting: bool, tally: &mut Tally<'_>) -> Result<(), CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(quoting)
        .flexible(true)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(()),
        Some(Ok(h)) => h,
        Some(Err(e)) => {
            return Err(CorpusError::Parse {
                line: 1,
                message: format!("unreadable header: {e}"),
            })
        }
    };
    let cols = &tally.opts.columns;
    let required = |cands: &Vec<String>| {
        find_column(&header, cands).ok_or_else(|| CorpusError::MissingColumn {
            source_name: tally.source.to_string(),
            candidates: cands.clone(),
        })
    };
    let p = required(&cols.premise)?;
    let h = required(&cols.hypothesis)?;
    let l = required(&cols.label)?;
    let pe = find_column(&header, &cols.premise_en);
    let he = find_column(&header, &cols.hypothesis_en);
    let lang = find_column(&header, &cols.language);

    for rec in records {
        let Ok(rec) = rec else {
            tally.malformed();
            continue;
        };
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let get = |i: Option<usize>| i.and_then(|i| rec.get(i)).map(str::to_string);
        tally.row(RawRow {
            premise: get(Some(p)),
            hypothesis: get(Some(h)),
            label: get(Some(l)),
            premise_en: get(pe),
            hypothesis_en: get(he),
            language: get(lang),
        });
    }
    Ok(())
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, candidates: &[String]) -> Option<String> {
    candidates.iter().find_map(|c| match obj.get(c)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

fn ingest_json_lines<R: Read>(reader: R, tally: &mut Tally<'_>) -> Result<(), CorpusError> {
    let buf = BufReader::new(reader);
    for (i, line) in buf.split(b'\n').enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let Ok(text) = std::str::from_utf8(&line) else {
            tally.malformed();
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(text) else {
            tally.malformed();
            continue;
        };
        let cols = &tally.opts.columns;
        let row = RawRow {
            premise: json_field(&obj, &cols.premise),
            hypothesis: json_field(&obj, &cols.hypothesis),
            label: json_field(&obj, &cols.label),
            premise_en: json_field(&obj, &cols.premise_en),
            hypothesis_en: json_field(&obj, &cols.hypothesis_en),
            language: json_field(&obj, &cols.language),
        };
        tally.row(row);
    }
    Ok(())
}

/// Reads one source from any byte stream.
pub fn ingest_reader<R: Read>(reader: R, format: Source, opts: &IngestOptions) -> Result<IngestReport, CorpusError> {
    let mut tally = Tally {
        source: format,
        opts,
        report: IngestReport {
            examples: Vec::new(),
            rows: 0,
            dropped: 0,
            filtered: 0,
        },
    };
    match format {
        Source::Xnli => ingest_delimited(reader, b'\t', false, &mut tally)?,
        Source::Arnli => ingest_delimited(reader, b',', true, &mut tally)?,
        Source::SnliAr => ingest_json_lines(reader, &mut tally)?,
    }
    tally.finish()
}

pub fn ingest_source(path: &Path, format: Source, opts: &IngestOptions) -> Result<IngestReport, CorpusError> {
    let f = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    ingest_reader(f, format, opts)
}
