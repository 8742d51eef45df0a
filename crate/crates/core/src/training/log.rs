use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Objective, TrainError};
use crate::eval::ClassMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
    /// Phase configured with zero epochs.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub phase: usize,
    pub task: Objective,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: ClassMetrics,
    pub monitor_value: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

/// Everything one `train_task` call produced. Epochs are 1-based;
/// `best_epoch` is 0 only for a skipped phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseLog {
    pub phase: usize,
    pub task: Objective,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_value: Option<f64>,
    pub stop_reason: StopReason,
    pub encoder_digest_start: String,
    pub encoder_digest_end: String,
}

/// One line of the training log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Epoch(EpochRecord),
    Summary {
        phase: usize,
        task: Objective,
        epochs_run: usize,
        best_epoch: usize,
        best_value: Option<f64>,
        stop_reason: StopReason,
        encoder_digest_start: String,
        encoder_digest_end: String,
    },
}

fn records(phases: &[PhaseLog]) -> Vec<LogRecord> {
    let mut out = Vec::new();
    for p in phases {
        out.extend(p.epochs.iter().cloned().map(LogRecord::Epoch));
        out.push(LogRecord::Summary {
            phase: p.phase,
            task: p.task,
            epochs_run: p.epochs.len(),
            best_epoch: p.best_epoch,
            best_value: p.best_value,
            stop_reason: p.stop_reason,
            encoder_digest_start: p.encoder_digest_start.clone(),
            encoder_digest_end: p.encoder_digest_end.clone(),
        });
    }
    out
}

/// Line-delimited JSON: each phase's epoch records followed by its summary.
pub fn training_log_string(phases: &[PhaseLog]) -> String {
    let mut s = String::new();
    for r in records(phases) {
        s.push_str(&serde_json::to_string(&r).expect("log records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_training_log(path: &Path, phases: &[PhaseLog]) -> Result<(), TrainError> {
    let io = |e: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(training_log_string(phases).as_bytes()).map_err(io)
}

pub fn read_training_log(text: &str) -> Result<Vec<LogRecord>, TrainError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TrainError::Data(format!("training log line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trips() {
        let epoch = EpochRecord {
            phase: 1,
            task: Objective::Nli,
            epoch: 1,
            train_loss: 1.1,
            validation: ClassMetrics {
                accuracy: 0.5,
                macro_f1: 0.4,
            },
            monitor_value: 0.4,
            learning_rate: 1e-4,
            improved: true,
        };
        let phase = PhaseLog {
            phase: 1,
            task: Objective::Nli,
            epochs: vec![epoch],
            best_epoch: 1,
            best_value: Some(0.4),
            stop_reason: StopReason::MaxEpochs,
            encoder_digest_start: "a".into(),
            encoder_digest_end: "b".into(),
        };
        let text = training_log_string(&[phase]);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"record\":\"epoch\""));
        let back = read_training_log(&text).unwrap();
        assert!(matches!(back[1], LogRecord::Summary { epochs_run: 1, .. }));
        assert!(read_training_log("{\"record\":\"nope\"}").is_err());
    }
}
