//! AdamW fine-tuning with early stopping, and the baseline / multitask pipelines.

mod data;
mod log;
mod optim;
mod pipeline;
mod trainer;

pub use data::Dataset;
pub use log::{read_training_log, write_training_log, EpochRecord, LogRecord, PhaseLog, StopReason};
pub use optim::{
    adamw_step, clip_grad_norm, decays, lr_schedule, warmup_steps, OptimizerState, ADAM_EPS, BETA1, BETA2,
};
pub use pipeline::{run_pipeline, PipelineData, PipelineDigests, PipelineMode, PipelineOutput};
pub use log::training_log_string;
pub use trainer::{evaluate, evaluate_loss, predict, train_task, EarlyStopper, StopDecision, Trainer};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;
use crate::eval::{ClassMetrics, MetricError};
use crate::model::{HeadKind, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite gradient in parameter {param}")]
    Numeric { param: String },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Loss { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// What a training phase optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Nli,
    Cd,
    Ner,
}

impl Objective {
    pub fn head(self) -> HeadKind {
        match self {
            Objective::Ner => HeadKind::NerToken,
            _ => HeadKind::Cls,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Nli => "nli",
            Objective::Cd => "cd",
            Objective::Ner => "ner",
        }
    }
}

impl From<Task> for Objective {
    fn from(t: Task) -> Self {
        match t {
            Task::Nli => Objective::Nli,
            Task::Cd => Objective::Cd,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nli" => Ok(Objective::Nli),
            "cd" => Ok(Objective::Cd),
            "ner" => Ok(Objective::Ner),
            other => Err(format!("unknown task {other:?} (expected nli, cd or ner)")),
        }
    }
}

/// Validation quantity used for early stopping and best-epoch selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    MacroF1,
    Accuracy,
}

impl Monitor {
    pub fn read(self, m: &ClassMetrics) -> f64 {
        match self {
            Monitor::MacroF1 => m.macro_f1,
            Monitor::Accuracy => m.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_fraction: f64,
    pub monitor: Monitor,
    pub seed: u64,
    pub task: Objective,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl TrainConfig {
    /// Classification defaults: 5 epochs, patience 1, macro-F1 monitor.
    pub fn classification(task: Task, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 5,
            patience: 1,
            warmup_fraction: 0.1,
            monitor: Monitor::MacroF1,
            seed,
            task: task.into(),
            max_grad_norm: None,
        }
    }

    /// NER pre-training defaults: 3 epochs at 5e-4.
    pub fn ner(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            max_epochs: 3,
            task: Objective::Ner,
            ..TrainConfig::classification(Task::Nli, seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail(format!("warmup_fraction {} is outside [0, 1)", self.warmup_fraction));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n.is_finite() && n > 0.0) {
                return fail(format!("max_grad_norm {n} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::classification(Task::Cd, 1).validate().unwrap();
        let ner = TrainConfig::ner(1);
        ner.validate().unwrap();
        assert_eq!((ner.max_epochs, ner.learning_rate), (3, 5e-4));
    }

    #[test]
    fn violations_are_named() {
        let mut c = TrainConfig::classification(Task::Nli, 1);
        c.warmup_fraction = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("warmup_fraction"));
        let mut c = TrainConfig::classification(Task::Nli, 1);
        c.patience = 0;
        assert!(c.validate().unwrap_err().to_string().contains("patience"));
        let mut c = TrainConfig::classification(Task::Nli, 1);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
