use super::data::scored;
use super::log::{EpochRecord, PhaseLog, StopReason};
use super::optim::{adamw_step, clip_grad_norm, lr_schedule};
use super::{Dataset, OptimizerState, TrainConfig, TrainError};
use crate::eval::{class_metrics, ner_metrics, ClassMetrics};
use crate::model::{argmax_last, Mode, Model};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tape;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;
const EVAL_BATCH: usize = 64;

/// Stops once the monitor has failed to strictly improve for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the monitor value for 1-based `epoch`. NaN never improves.
    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = match self.best {
            None => !value.is_nan(),
            Some(b) => value > b,
        };
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best.map(|b| (self.best_epoch, b))
    }
}

/// Owns a model and its optimizer state for one phase.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub state: OptimizerState,
    total_steps: usize,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, train_len: usize) -> Result<Self, TrainError> {
        config.validate()?;
        if train_len == 0 {
            return Err(TrainError::Data("training split is empty".into()));
        }
        if model.head_kind() != Some(config.task.head()) {
            return Err(TrainError::Config(format!(
                "task {} needs {}, model has {}",
                config.task,
                config.task.head(),
                model.head_kind().map_or("no head".to_string(), |h| h.to_string())
            )));
        }
        let total_steps = config.max_epochs * train_len.div_ceil(config.batch_size);
        Ok(Trainer {
            model,
            config,
            state: OptimizerState::new(),
            total_steps,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.step, self.total_steps, self.config.learning_rate, self.config.warmup_fraction)
    }

    /// One pass over `data` in a shuffled order fixed by (seed, epoch).
    /// Returns the mean batch loss.
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Data("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let shuffle_seed = derive_seed(derive_seed(self.config.seed, SHUFFLE_STREAM), epoch as u64);
        SplitMix64::new(shuffle_seed).shuffle(&mut order);
        let dropout_base = derive_seed(self.config.seed, DROPOUT_STREAM);

        let mut total = 0.0;
        let mut batches = 0;
        for (i, idx) in order.chunks(self.config.batch_size).enumerate() {
            let (batch, labels) = data.batch(idx)?;
            let mut tape = Tape::new();
            let bindings = self.model.bind(&mut tape, true);
            let mode = Mode::Train {
                dropout_seed: derive_seed(dropout_base, self.step as u64),
            };
            let out = self.model.encode(&mut tape, &bindings, &batch, mode)?;
            let logits = self.model.task_logits(&mut tape, &bindings, &out)?;
            let loss = self.model.task_loss(&mut tape, logits, &batch, &labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(TrainError::Loss { epoch, step: i });
            }
            tape.backward(loss).map_err(crate::model::ModelError::from)?;
            self.model.accumulate_grads(&mut tape, &bindings);
            drop(tape);

            let lr = self.current_lr();
            let mut params = self.model.params_mut();
            if let Some(max) = self.config.max_grad_norm {
                clip_grad_norm(&mut params, max);
            }
            adamw_step(&mut params, &mut self.state, lr, self.config.weight_decay)?;
            drop(params);
            self.model.zero_grad();
            self.step += 1;
            total += value;
            batches += 1;
        }
        Ok(total / batches as f64)
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<ClassMetrics, TrainError> {
        evaluate(&self.model, data)
    }
}

/// Eval-mode predictions and gold targets, flattened; tagging data yields
/// one entry per position with unscored positions carrying `IGNORE_INDEX`.
pub fn predict(model: &Model, data: &Dataset) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let mut preds = Vec::new();
    let mut gold = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (batch, labels) = data.batch(chunk)?;
        let logits = model.predict_logits(&batch)?;
        preds.extend(argmax_last(&logits));
        gold.extend(Dataset::targets(&batch, &labels));
    }
    Ok((preds, gold))
}

/// Accuracy and macro-F1 of `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<ClassMetrics, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("evaluation split is empty".into()));
    }
    let (preds, gold) = predict(model, data)?;
    Ok(match data {
        Dataset::Classification { num_classes, .. } => class_metrics(&preds, &gold, *num_classes)?,
        Dataset::Tagging(_) => {
            let mask = scored(&gold);
            let gold: Vec<usize> = gold.iter().map(|&g| if g == usize::MAX { 0 } else { g }).collect();
            ner_metrics(&preds, &gold, &mask)?
        }
    })
}

/// Mean eval-mode loss over `data`, batch-weighted like `train_epoch`.
pub fn evaluate_loss(model: &Model, data: &Dataset, batch_size: usize) -> Result<f64, TrainError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut n = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (batch, labels) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, false);
        let out = model.encode(&mut tape, &b, &batch, Mode::Eval)?;
        let logits = model.task_logits(&mut tape, &b, &out)?;
        let loss = model.task_loss(&mut tape, logits, &batch, &labels)?;
        total += tape.value(loss).item();
        n += 1;
    }
    Ok(total / n.max(1) as f64)
}

/// Trains up to `max_epochs` with early stopping and returns the
/// best-validation-epoch model (not the last one) with its phase log.
pub fn train_task(
    model: Model,
    train: &Dataset,
    validation: &Dataset,
    config: &TrainConfig,
    phase: usize,
) -> Result<(Model, PhaseLog), TrainError> {
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::Data(format!("{} split is empty", if train.is_empty() { "training" } else { "validation" })));
    }
    for d in [train, validation] {
        if !d.fits(config.task) {
            return Err(TrainError::Config(format!("dataset does not match task {}", config.task)));
        }
    }
    let digest_start = model.encoder_digest();
    let mut trainer = Trainer::new(model, config.clone(), train.len())?;
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best = trainer.model.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let train_loss = trainer.train_epoch(train, epoch)?;
        let validation_metrics = trainer.evaluate(validation)?;
        let value = config.monitor.read(&validation_metrics);
        let decision = stopper.observe(epoch, value);
        if decision.improved {
            best = trainer.model.clone();
        }
        epochs.push(EpochRecord {
            phase,
            task: config.task,
            epoch,
            train_loss,
            validation: validation_metrics,
            monitor_value: value,
            learning_rate: trainer.current_lr(),
            improved: decision.improved,
        });
        if decision.stop && epoch < config.max_epochs {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let (best_epoch, best_value) = stopper.best().map_or((0, None), |(e, v)| (e, Some(v)));
    let log = PhaseLog {
        phase,
        task: config.task,
        epochs,
        best_epoch,
        best_value,
        stop_reason,
        encoder_digest_start: digest_start,
        encoder_digest_end: best.encoder_digest(),
    };
    Ok((best, log))
}
