use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::log::{PhaseLog, StopReason};
use super::trainer::train_task;
use super::{Dataset, Objective, TrainConfig, TrainError};
use crate::model::{HeadKind, Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineMode {
    /// Init, attach the CLS head, fine-tune.
    Baseline,
    /// Init, attach the token head, train NER, swap to the CLS head, fine-tune.
    Multitask,
}

impl PipelineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::Baseline => "baseline",
            PipelineMode::Multitask => "multitask",
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(PipelineMode::Baseline),
            "multitask" => Ok(PipelineMode::Multitask),
            other => Err(format!("unknown mode {other:?} (expected baseline or multitask)")),
        }
    }
}

/// Train/validation splits for the target task and, for multitask runs,
/// for the NER phase.
#[derive(Debug, Clone, Copy)]
pub struct PipelineData<'a> {
    pub train: &'a Dataset,
    pub validation: &'a Dataset,
    pub ner_train: Option<&'a Dataset>,
    pub ner_validation: Option<&'a Dataset>,
}

/// Encoder digests at every phase boundary plus the fresh CLS head's digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineDigests {
    pub init: String,
    pub after_ner: Option<String>,
    pub after_swap: Option<String>,
    pub cls_head_init: String,
    pub final_encoder: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: Model,
    pub mode: PipelineMode,
    pub phases: Vec<PhaseLog>,
    pub digests: PipelineDigests,
}

/// Runs the baseline or multitask recipe for `task_config.task`.
///
/// The encoder is initialized from `task_config.seed` in both modes and
/// the CLS head is always drawn from that same seed, so a multitask run
/// with zero NER epochs reproduces the baseline exactly.
pub fn run_pipeline(
    mode: PipelineMode,
    data: PipelineData<'_>,
    model_config: &ModelConfig,
    task_config: &TrainConfig,
    ner_config: &TrainConfig,
) -> Result<PipelineOutput, TrainError> {
    if task_config.task == Objective::Ner {
        return Err(TrainError::Config("pipeline target task must be nli or cd".into()));
    }
    let classes = data.train.num_classes();
    if model_config.num_classes != classes {
        return Err(TrainError::Config(format!(
            "model num_classes {} does not match {} task with {classes} classes",
            model_config.num_classes, task_config.task
        )));
    }
    let seed = task_config.seed;
    let mut phases = Vec::new();

    let (model, after_ner, after_swap) = match mode {
        PipelineMode::Baseline => (Model::init(model_config.clone(), seed, HeadKind::Cls)?, None, None),
        PipelineMode::Multitask => {
            let (Some(ner_train), Some(ner_valid)) = (data.ner_train, data.ner_validation) else {
                return Err(TrainError::Data("multitask mode needs an NER corpus".into()));
            };
            let mut model = Model::init(model_config.clone(), seed, HeadKind::NerToken)?;
            if ner_config.task != Objective::Ner {
                return Err(TrainError::Config("NER phase config must have task ner".into()));
            }
            let start = model.encoder_digest();
            if ner_config.max_epochs == 0 {
                phases.push(PhaseLog {
                    phase: 1,
                    task: Objective::Ner,
                    epochs: Vec::new(),
                    best_epoch: 0,
                    best_value: None,
                    stop_reason: StopReason::Skipped,
                    encoder_digest_start: start.clone(),
                    encoder_digest_end: start,
                });
            } else {
                let (trained, log) = train_task(model, ner_train, ner_valid, ner_config, 1)?;
                model = trained;
                phases.push(log);
            }
            let after_ner = model.encoder_digest();
            model.swap_head(HeadKind::Cls, seed);
            let after_swap = model.encoder_digest();
            (model, Some(after_ner), Some(after_swap))
        }
    };
    let init = phases
        .first()
        .map_or_else(|| model.encoder_digest(), |p| p.encoder_digest_start.clone());
    let cls_head_init = model.head().expect("cls head attached").digest();

    let (model, log) = train_task(model, data.train, data.validation, task_config, phases.len() + 1)?;
    phases.push(log);
    Ok(PipelineOutput {
        digests: PipelineDigests {
            init,
            after_ner,
            after_swap,
            cls_head_init,
            final_encoder: model.encoder_digest(),
        },
        model,
        mode,
        phases,
    })
}
