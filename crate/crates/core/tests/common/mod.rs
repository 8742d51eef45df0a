#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nli_lab::corpus::{parse_anercorp_str, read_unified_str, NerSentence, NliExample, Task};
use nli_lab::model::{Batch, Bindings, HeadKind, Mode, Model, ModelConfig};
use nli_lab::rng::SplitMix64;
use nli_lab::tensor::{gradcheck_many, GradcheckReport, Tensor};
use nli_lab::tokenizer::{normalize_text, train_vocab, NormalizationProfile, Vocabulary, IGNORE_INDEX};
use nli_lab::training::{Dataset, Monitor, Objective, TrainConfig};

/// Resolves from either crate's manifest dir; the CLI acceptance suite
/// shares these helpers.
pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn random_tensor(shape: Vec<usize>, rng: &mut SplitMix64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Gradcheck config: 2 layers, hidden 16, B=2, T=8.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden_dim: 16,
        ff_dim: 32,
        vocab_size: 20,
        max_len: 8,
        dropout_p: 0.1,
        ..ModelConfig::default()
    }
}

/// A B=2, T=8 batch whose second item has two padded positions.
pub fn gradcheck_batch(kind: HeadKind) -> (Batch, Vec<usize>) {
    let token_ids = vec![2, 7, 9, 3, 11, 5, 14, 3, 2, 6, 19, 3, 8, 3, 0, 0];
    let segment_ids = vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0];
    let key_mask = (0..16).map(|i| i < 14).collect();
    let tag_labels = match kind {
        HeadKind::NerToken => Some(vec![
            IGNORE_INDEX, 1, 2, 0, 5, IGNORE_INDEX, 8, IGNORE_INDEX,
            IGNORE_INDEX, 3, 4, 0, 7, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX,
        ]),
        HeadKind::Cls => None,
    };
    let batch = Batch {
        batch: 2,
        seq: 8,
        token_ids,
        segment_ids,
        key_mask,
        tag_labels,
    };
    (batch, vec![2, 0])
}

/// Finite-difference check of the eval-mode loss with respect to every
/// encoder and head array.
pub fn end_to_end_gradcheck(kind: HeadKind, seed: u64, step: f64, tol: f64) -> GradcheckReport {
    let model = Model::init(gradcheck_config(), seed, kind).unwrap();
    let (batch, labels) = gradcheck_batch(kind);
    let names: Vec<String> = model.encoder.iter().map(|(n, _)| n.clone()).collect();
    let head = model.head().unwrap();
    let mut inputs: Vec<Tensor> = model.encoder.iter().map(|(_, t)| t.clone()).collect();
    inputs.push(head.weight.clone());
    inputs.push(head.bias.clone());
    let n = names.len();
    gradcheck_many(
        |tape, vars| {
            let bindings = Bindings {
                encoder: names.iter().cloned().zip(vars[..n].iter().copied()).collect::<BTreeMap<_, _>>(),
                head: Some((kind, vars[n], vars[n + 1])),
            };
            let out = model.encode(tape, &bindings, &batch, Mode::Eval).unwrap();
            let logits = model.task_logits(tape, &bindings, &out).unwrap();
            Ok(model.task_loss(tape, logits, &batch, &labels).unwrap())
        },
        &inputs,
        step,
        tol,
    )
    .unwrap()
}

/// The 32-example overfit fixture, its vocabulary and encoded dataset.
pub fn overfit_data() -> (Vec<NliExample>, Vocabulary, Dataset) {
    let examples = read_unified_str(&fixture("overfit_32.jsonl")).unwrap();
    let lines: Vec<String> = examples
        .iter()
        .flat_map(|e| [&e.premise, &e.hypothesis])
        .map(|s| normalize_text(s, &NormalizationProfile::TOKENIZER))
        .collect();
    let vocab = train_vocab(&lines, 400, 1).unwrap();
    let data = Dataset::from_examples(&examples, Task::Nli, &vocab, 64).unwrap();
    (examples, vocab, data)
}

/// Default toy encoder sized to a vocabulary.
pub fn toy_config(vocab: &Vocabulary, classes: usize, max_len: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        max_len,
        num_classes: classes,
        ..ModelConfig::default()
    }
}

/// Memorization settings: no decay, no warmup, no early stop.
pub fn overfit_train_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 0.0,
        batch_size: 8,
        max_epochs: epochs,
        patience: epochs,
        warmup_fraction: 0.0,
        monitor: Monitor::Accuracy,
        seed,
        task: Objective::Nli,
        max_grad_norm: None,
    }
}

/// Three-source fixture corpus, concatenated in source order.
pub fn fixture_corpus() -> Vec<NliExample> {
    use nli_lab::corpus::{ingest_source, IngestOptions, Source};
    let opts = IngestOptions::default();
    [
        (Source::Xnli, "xnli_sample.tsv"),
        (Source::SnliAr, "snli_ar_sample.jsonl"),
        (Source::Arnli, "arnli_sample.csv"),
    ]
    .into_iter()
    .flat_map(|(s, f)| ingest_source(&fixture_path(f), s, &opts).unwrap().examples)
    .collect()
}

pub fn ner_fixture() -> Vec<NerSentence> {
    parse_anercorp_str(&fixture("anercorp_sample.txt"), true).unwrap().sentences
}

/// Small encoder, vocabulary and datasets for pipeline runs on the fixtures.
pub struct PipelineFixture {
    pub vocab: Vocabulary,
    pub model: ModelConfig,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub ner_train: Dataset,
    pub ner_validation: Dataset,
}

pub fn pipeline_fixture(task: Task, split_seed: u64) -> PipelineFixture {
    let splits = nli_lab::corpus::merge_and_split(fixture_corpus(), split_seed).unwrap();
    let ner = ner_fixture();
    let (ner_train, ner_valid) = ner.split_at(ner.len() - 8);
    let profile = NormalizationProfile::TOKENIZER;
    let mut lines: Vec<String> = splits
        .train
        .iter()
        .flat_map(|e| [&e.premise, &e.hypothesis])
        .map(|s| normalize_text(s, &profile))
        .collect();
    lines.extend(ner_train.iter().map(|s| normalize_text(&s.words.join(" "), &profile)));
    let vocab = train_vocab(&lines, 2000, 1).unwrap();
    let max_len = 48;
    let model = ModelConfig {
        layers: 2,
        heads: 2,
        hidden_dim: 32,
        ff_dim: 64,
        vocab_size: vocab.len(),
        max_len,
        num_classes: task.num_classes(),
        ..ModelConfig::default()
    };
    let enc = |ex: &[NliExample]| Dataset::from_examples(ex, task, &vocab, max_len).unwrap();
    PipelineFixture {
        model,
        train: enc(&splits.train),
        validation: enc(&splits.validation),
        test: enc(&splits.test),
        ner_train: Dataset::from_sentences(ner_train, &vocab, max_len).unwrap(),
        ner_validation: Dataset::from_sentences(ner_valid, &vocab, max_len).unwrap(),
        vocab,
    }
}

/// Desk-profile schedules for pipeline fixture runs.
pub fn pipeline_configs(task: Task, seed: u64) -> (TrainConfig, TrainConfig) {
    let mut cls = TrainConfig::classification(task, seed);
    cls.learning_rate = 1e-3;
    cls.batch_size = 8;
    cls.max_epochs = 3;
    let mut ner = TrainConfig::ner(seed);
    ner.batch_size = 8;
    (cls, ner)
}
