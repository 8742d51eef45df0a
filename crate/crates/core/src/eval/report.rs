use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("no result rows to render")]
    Empty,
    #[error("duplicate row for task {task}, model {model:?}, multitask={multitask}; give each run a distinct model name")]
    Duplicate { task: String, model: String, multitask: bool },
    #[error("metric {value} for model {model:?} is outside [0, 1]")]
    Range { model: String, value: f64 },
}

/// One evaluated run; metrics are stored as fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub task: Task,
    pub model: String,
    pub multitask: bool,
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub multitask: bool,
    pub accuracy: String,
    pub f1_score: String,
}

/// One table per task, rows in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub rows: Vec<ReportRow>,
}

/// Renders a fraction as a percentage with one decimal, rounding half away
/// from zero on the exact shortest decimal form of the input.
///
/// Works on the decimal digits directly so `0.7535` gives `75.4` even
/// though `0.7535 * 100.0` is not exactly `75.35` in binary.
pub fn format_percent(fraction: f64) -> String {
    let repr = format!("{:?}", fraction.abs());
    let negative = fraction < 0.0 && fraction != 0.0;
    let (mantissa, exp) = match repr.split_once('e') {
        Some((m, e)) => (m.to_string(), e.parse::<i32>().expect("float exponent")),
        None => (repr, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((&mantissa, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    // position of the decimal point in `digits`, after scaling by 100
    let mut point = int_part.len() as i32 + exp + 2;
    if point < 0 {
        let pad = (-point) as usize;
        digits.splice(0..0, std::iter::repeat_n(0, pad));
        point = 0;
    }
    let point = point as usize;
    if digits.len() < point + 2 {
        digits.resize(point + 2, 0);
    }
    // keep one fractional digit, round on the next one
    let mut kept: Vec<u8> = digits[..point + 1].to_vec();
    if digits[point + 1] >= 5 {
        let mut i = kept.len();
        loop {
            if i == 0 {
                kept.insert(0, 1);
                break;
            }
            i -= 1;
            if kept[i] == 9 {
                kept[i] = 0;
            } else {
                kept[i] += 1;
                break;
            }
        }
    }
    let (int_digits, frac_digit) = kept.split_at(kept.len() - 1);
    let mut int_str: String = int_digits.iter().map(|d| char::from(b'0' + d)).collect();
    let trimmed = int_str.trim_start_matches('0');
    int_str = if trimmed.is_empty() { "0".into() } else { trimmed.into() };
    let sign = if negative && (int_str != "0" || frac_digit[0] != 0) { "-" } else { "" };
    format!("{sign}{int_str}.{}", frac_digit[0])
}

/// Groups records by task (NLI before CD) and checks for duplicates.
pub fn build_reports(records: &[ResultRecord]) -> Result<Vec<EvalReport>, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut seen = BTreeSet::new();
    for r in records {
        for value in [r.accuracy, r.macro_f1] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ReportError::Range {
                    model: r.model.clone(),
                    value,
                });
            }
        }
        if !seen.insert((r.task.as_str(), r.model.as_str(), r.multitask)) {
            return Err(ReportError::Duplicate {
                task: r.task.as_str().to_string(),
                model: r.model.clone(),
                multitask: r.multitask,
            });
        }
    }
    let mut out = Vec::new();
    for task in [Task::Nli, Task::Cd] {
        let rows: Vec<ReportRow> = records
            .iter()
            .filter(|r| r.task == task)
            .map(|r| ReportRow {
                model: r.model.clone(),
                multitask: r.multitask,
                accuracy: format_percent(r.accuracy),
                f1_score: format_percent(r.macro_f1),
            })
            .collect();
        if !rows.is_empty() {
            out.push(EvalReport { task, rows });
        }
    }
    Ok(out)
}

const HEADERS: [&str; 4] = ["Model", "Multitask Finetuning", "Accuracy", "F1-Score"];

fn task_title(task: Task) -> &'static str {
    match task {
        Task::Nli => "NLI",
        Task::Cd => "CD",
    }
}

/// Plain-text table: `Model | Multitask Finetuning | Accuracy | F1-Score`,
/// with `✓` / `x` in the multitask column and percentages to one decimal.
pub fn render_table(report: &EvalReport) -> String {
    let cells: Vec<[String; 4]> = report
        .rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                if r.multitask { "✓".into() } else { "x".into() },
                r.accuracy.clone(),
                r.f1_score.clone(),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, row: &[&str]| {
        out.push('|');
        for (c, w) in row.iter().zip(widths) {
            let pad = w - c.chars().count();
            let _ = write!(out, " {c}{} |", " ".repeat(pad));
        }
        out.push('\n');
    };
    let mut out = format!("Results for the {} task, in %\n", task_title(report.task));
    line(&mut out, &HEADERS);
    out.push('|');
    for w in widths {
        let _ = write!(out, "{}|", "-".repeat(w + 2));
    }
    out.push('\n');
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    out
}

/// All task tables separated by a blank line.
pub fn render_report(records: &[ResultRecord]) -> Result<String, ReportError> {
    let tables: Vec<String> = build_reports(records)?.iter().map(render_table).collect();
    Ok(tables.join("\n"))
}
