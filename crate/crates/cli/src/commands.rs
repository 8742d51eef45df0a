//! The six commands as plain functions; `main` only parses flags and
//! prints diagnostics.

use std::path::{Path, PathBuf};

use nli_lab::corpus::{
    corpus_stats, ingest_source, merge_and_split, parse_anercorp, read_unified, write_unified_string, CorpusError,
    CorpusStats, IngestOptions, NerSentence, NliExample, Source, SplitManifest, Task,
};
use nli_lab::eval::{render_report, ClassMetrics, ResultRecord};
use nli_lab::hpo::{search, Point, SearchResult, TrialOutcome};
use nli_lab::model::{HeadKind, Model};
use nli_lab::rng::{derive_seed, SplitMix64};
use nli_lab::tokenizer::{normalize_text, train_vocab, NormalizationProfile, Vocabulary};
use nli_lab::training::{
    evaluate, run_pipeline, training_log_string, Dataset, PipelineData, PipelineDigests, PipelineMode,
    PipelineOutput,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SourceSpec};
use crate::error::CliError;

/// Stream for the NER train/validation shuffle.
const NER_SPLIT_STREAM: u64 = 0x4e45_5253;

pub const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

/// Writes through a sibling temp file and a rename, so readers never see
/// a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
    s.push('\n');
    s
}

/// `FORMAT=PATH`, as given to `build-corpus --source`.
pub fn parse_source_arg(arg: &str) -> Result<SourceSpec, CliError> {
    let (format, path) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("source {arg:?} is not FORMAT=PATH")))?;
    Ok(SourceSpec {
        format: format.parse::<Source>()?,
        path: PathBuf::from(path),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCount {
    pub format: Source,
    pub path: String,
    pub rows: usize,
    pub kept: usize,
    pub dropped: usize,
    pub filtered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub sources: Vec<SourceCount>,
    pub manifest: SplitManifest,
    pub stats: CorpusStats,
}

/// Ingests every source, merges, shuffles and splits. Nothing is written
/// unless every source ingests cleanly.
pub fn build_corpus(cfg: &RunConfig, sources: &[SourceSpec], out_dir: &Path) -> Result<CorpusSummary, CliError> {
    if sources.is_empty() {
        return Err(CliError::Usage("build-corpus needs at least one source".into()));
    }
    let opts = IngestOptions {
        language: cfg.corpus.language.clone(),
        ..IngestOptions::default()
    };
    let mut merged = Vec::new();
    let mut counts = Vec::new();
    for s in sources {
        let report = ingest_source(&s.path, s.format, &opts).map_err(|e| match e {
            CorpusError::CorruptSource { dropped, total, .. } => CorpusError::CorruptSource {
                source_name: s.path.display().to_string(),
                dropped,
                total,
            },
            other => other,
        })?;
        counts.push(SourceCount {
            format: s.format,
            path: s.path.display().to_string(),
            rows: report.rows,
            kept: report.examples.len(),
            dropped: report.dropped,
            filtered: report.filtered,
        });
        merged.extend(report.examples);
    }
    let stats = corpus_stats(&merged);
    let unified = write_unified_string(&merged);
    let splits = merge_and_split(merged, cfg.seed)?;
    let summary = CorpusSummary {
        sources: counts,
        manifest: splits.manifest(),
        stats,
    };
    write_atomic(&out_dir.join("corpus.jsonl"), unified.as_bytes())?;
    for (name, part) in SPLIT_NAMES.iter().zip([&splits.train, &splits.validation, &splits.test]) {
        write_atomic(&out_dir.join(format!("{name}.jsonl")), write_unified_string(part).as_bytes())?;
    }
    write_atomic(&out_dir.join("stats.json"), json(&summary.stats).as_bytes())?;
    // manifest last: its presence marks a complete corpus
    write_atomic(&out_dir.join("manifest.json"), json(&summary.manifest).as_bytes())?;
    Ok(summary)
}

pub fn read_split(cfg: &RunConfig, name: &str) -> Result<Vec<NliExample>, CliError> {
    let dir = cfg.corpus_dir();
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Config(format!(
            "no corpus at {} (run build-corpus first)",
            dir.display()
        )));
    }
    Ok(read_unified(&dir.join(format!("{name}.jsonl")))?)
}

fn ner_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.paths.ner_corpus.as_deref().ok_or_else(|| {
        CliError::Config("paths.ner_corpus is not set (needed for multitask runs)".into())
    })
}

/// Seeded shuffle of the NER sentences, then a held-out validation tail
/// of `ner_validation_fraction` (at least one sentence).
pub fn split_ner(sentences: Vec<NerSentence>, seed: u64, fraction: f64) -> (Vec<NerSentence>, Vec<NerSentence>) {
    let mut all = sentences;
    SplitMix64::new(derive_seed(seed, NER_SPLIT_STREAM)).shuffle(&mut all);
    let n_valid = ((all.len() as f64 * fraction).floor() as usize).max(1).min(all.len());
    let valid = all.split_off(all.len() - n_valid);
    (all, valid)
}

fn load_ner(cfg: &RunConfig) -> Result<(Vec<NerSentence>, Vec<NerSentence>), CliError> {
    let parsed = parse_anercorp(ner_path(cfg)?, cfg.corpus.ner_repair)?;
    if parsed.sentences.len() < 2 {
        return Err(CliError::Config("NER corpus needs at least two sentences".into()));
    }
    Ok(split_ner(parsed.sentences, cfg.seed, cfg.corpus.ner_validation_fraction))
}

/// Learns a vocabulary from the training split (plus NER words when
/// configured), never from validation or test text.
pub fn train_tokenizer(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    let profile = NormalizationProfile::TOKENIZER;
    let mut lines: Vec<String> = Vec::new();
    for ex in read_split(cfg, "train")? {
        lines.push(normalize_text(&ex.premise, &profile));
        lines.push(normalize_text(&ex.hypothesis, &profile));
    }
    if cfg.tokenizer.include_ner && cfg.paths.ner_corpus.is_some() {
        let (train, _) = load_ner(cfg)?;
        lines.extend(train.iter().map(|s| normalize_text(&s.words.join(" "), &profile)));
    }
    let vocab = train_vocab(&lines, cfg.tokenizer.vocab_size, cfg.tokenizer.min_frequency)?;
    write_atomic(&cfg.vocab_path(), vocab.to_text().as_bytes())?;
    Ok(vocab)
}

/// Encoded datasets shared by `train` and `hpo`.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub ner: Option<(Dataset, Dataset)>,
}

pub fn prepare(cfg: &RunConfig, task: Task, mode: PipelineMode) -> Result<Prepared, CliError> {
    let vocab_path = cfg.vocab_path();
    if !vocab_path.exists() {
        return Err(CliError::Config(format!(
            "no vocabulary at {} (run train-tokenizer first)",
            vocab_path.display()
        )));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let max_len = cfg.tokenizer.max_len;
    let encode = |name: &str| -> Result<Dataset, CliError> {
        Ok(Dataset::from_examples(&read_split(cfg, name)?, task, &vocab, max_len)?)
    };
    let (train, validation, test) = (encode("train")?, encode("validation")?, encode("test")?);
    let ner = match mode {
        PipelineMode::Baseline => None,
        PipelineMode::Multitask => {
            let (t, v) = load_ner(cfg)?;
            Some((
                Dataset::from_sentences(&t, &vocab, max_len)?,
                Dataset::from_sentences(&v, &vocab, max_len)?,
            ))
        }
    };
    Ok(Prepared {
        vocab,
        train,
        validation,
        test,
        ner,
    })
}

fn pipeline(cfg: &RunConfig, task: Task, mode: PipelineMode, data: &Prepared) -> Result<PipelineOutput, CliError> {
    let model_config = cfg.model_config(data.vocab.len(), task.num_classes());
    let pdata = PipelineData {
        train: &data.train,
        validation: &data.validation,
        ner_train: data.ner.as_ref().map(|n| &n.0),
        ner_validation: data.ner.as_ref().map(|n| &n.1),
    };
    Ok(run_pipeline(
        mode,
        pdata,
        &model_config,
        &cfg.task_config(task),
        &cfg.ner_config(),
    )?)
}

pub fn run_dir(cfg: &RunConfig, task: Task, mode: PipelineMode) -> PathBuf {
    cfg.paths.out_dir.join("runs").join(format!("{}-{mode}", task.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub result: ResultRecord,
    pub validation: ClassMetrics,
    pub digests: PipelineDigests,
    pub phases: usize,
}

/// Runs the pipeline and writes `model.ckpt`, `training_log.jsonl`,
/// `digests.json` and `result.json` (test split) into the run directory.
/// Outputs are staged in a `.partial` directory and moved into place only
/// when all of them exist.
pub fn train(cfg: &RunConfig, task: Task, mode: PipelineMode) -> Result<TrainSummary, CliError> {
    let data = prepare(cfg, task, mode)?;
    let out = pipeline(cfg, task, mode, &data)?;
    let test = evaluate(&out.model, &data.test)?;
    let validation = evaluate(&out.model, &data.validation)?;
    let result = ResultRecord {
        task,
        model: cfg.model_name.clone(),
        multitask: mode == PipelineMode::Multitask,
        accuracy: test.accuracy,
        macro_f1: test.macro_f1,
        split: Some("test".into()),
        seed: Some(cfg.seed),
    };

    let dir = run_dir(cfg, task, mode);
    let mut staging = dir.as_os_str().to_owned();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    let stage = || -> Result<(), CliError> {
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(CliError::io(&staging))?;
        }
        std::fs::create_dir_all(&staging).map_err(CliError::io(&staging))?;
        out.model.save_checkpoint(&staging.join("model.ckpt"))?;
        write_atomic(&staging.join("training_log.jsonl"), training_log_string(&out.phases).as_bytes())?;
        write_atomic(&staging.join("digests.json"), json(&out.digests).as_bytes())?;
        write_atomic(&staging.join("result.json"), json(&result).as_bytes())?;
        write_atomic(&staging.join("config.toml"), cfg.to_toml().as_bytes())?;
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        std::fs::rename(&staging, &dir).map_err(CliError::io(&dir))
    };
    if let Err(e) = stage() {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(TrainSummary {
        dir,
        result,
        validation,
        digests: out.digests,
        phases: out.phases.len(),
    })
}

pub fn hpo_dir(cfg: &RunConfig, task: Task, mode: PipelineMode) -> PathBuf {
    cfg.paths.out_dir.join("hpo").join(format!("{}-{mode}", task.as_str()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoSummary {
    pub dir: PathBuf,
    pub result: SearchResult,
    pub best_config: RunConfig,
}

/// Config with the searched hyperparameters replaced by `point`.
pub fn apply_point(cfg: &RunConfig, point: &Point) -> RunConfig {
    let mut c = cfg.clone();
    c.train.learning_rate = point.learning_rate;
    c.train.weight_decay = point.weight_decay;
    c.train.batch_size = point.batch_size;
    c
}

/// Random search with the full pipeline as objective (best validation
/// value of the final phase). Every trial trains from the run seed, so
/// `train --config best_config.toml` reproduces the best trial exactly.
/// Rerunning over an existing journal resumes it.
pub fn hpo(cfg: &RunConfig, task: Task, mode: PipelineMode, n_trials: usize) -> Result<HpoSummary, CliError> {
    let data = prepare(cfg, task, mode)?;
    let dir = hpo_dir(cfg, task, mode);
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    let journal = dir.join("journal.jsonl");
    let result = search(&cfg.hpo.space(), n_trials, cfg.seed, Some(&journal), |point, id, _| {
        let trial_cfg = apply_point(cfg, point);
        let out = pipeline(&trial_cfg, task, mode, &data).map_err(|e| e.to_string())?;
        let log_path = dir.join(format!("trial-{id:04}.jsonl"));
        write_atomic(&log_path, training_log_string(&out.phases).as_bytes()).map_err(|e| e.to_string())?;
        let metric = out.phases.last().and_then(|p| p.best_value).unwrap_or(f64::NAN);
        Ok(TrialOutcome {
            metric,
            log_ref: Some(log_path.file_name().unwrap().to_string_lossy().into_owned()),
        })
    })?;
    let best_config = apply_point(cfg, &result.best.point);
    write_atomic(&dir.join("best_config.toml"), best_config.to_toml().as_bytes())?;
    Ok(HpoSummary {
        dir,
        result,
        best_config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub examples: usize,
    pub metrics: ClassMetrics,
    pub record: ResultRecord,
}

/// Scores a checkpoint on one split of the corpus.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    task: Task,
    split: &str,
    multitask: bool,
) -> Result<EvalSummary, CliError> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(CliError::Usage(format!("unknown split {split:?} (expected train, validation or test)")));
    }
    let model = Model::load_checkpoint(checkpoint)?;
    if model.head_kind() != Some(HeadKind::Cls) || model.config.num_classes != task.num_classes() {
        return Err(CliError::Config(format!(
            "{} is not a {}-class {} checkpoint",
            checkpoint.display(),
            task.num_classes(),
            task.as_str()
        )));
    }
    let vocab = Vocabulary::load(&cfg.vocab_path())?;
    if vocab.len() != model.config.vocab_size {
        return Err(CliError::Config(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let data = Dataset::from_examples(&read_split(cfg, split)?, task, &vocab, model.config.max_len)?;
    let metrics = evaluate(&model, &data)?;
    Ok(EvalSummary {
        split: split.to_string(),
        examples: data.len(),
        metrics,
        record: ResultRecord {
            task,
            model: cfg.model_name.clone(),
            multitask,
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
            split: Some(split.to_string()),
            seed: Some(cfg.seed),
        },
    })
}

/// Reads one result file; any parse failure names the file.
pub fn read_result(path: &Path) -> Result<ResultRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn report(files: &[PathBuf]) -> Result<String, CliError> {
    if files.is_empty() {
        return Err(CliError::Usage("report needs at least one result file".into()));
    }
    let records = files.iter().map(|f| read_result(f)).collect::<Result<Vec<_>, _>>()?;
    Ok(render_report(&records)?)
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    json(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nli_lab::corpus::NerTag;

    fn sentence(i: usize) -> NerSentence {
        NerSentence::new(vec![format!("w{i}")], vec![NerTag::O]).unwrap()
    }

    #[test]
    fn source_args() {
        let s = parse_source_arg("xnli=data/x.tsv").unwrap();
        assert_eq!((s.format, s.path), (Source::Xnli, PathBuf::from("data/x.tsv")));
        assert!(matches!(parse_source_arg("x.tsv"), Err(CliError::Usage(_))));
        assert!(matches!(parse_source_arg("conll=x"), Err(CliError::Corpus(_))));
    }

    #[test]
    fn ner_split_is_seeded_partition() {
        let all: Vec<_> = (0..25).map(sentence).collect();
        let (t, v) = split_ner(all.clone(), 3, 0.1);
        assert_eq!((t.len(), v.len()), (23, 2));
        assert_eq!(split_ner(all.clone(), 3, 0.1), (t.clone(), v.clone()));
        let mut seen: Vec<_> = t.iter().chain(&v).map(|s| s.words[0].clone()).collect();
        seen.sort();
        let mut want: Vec<_> = all.iter().map(|s| s.words[0].clone()).collect();
        want.sort();
        assert_eq!(seen, want);
        assert_eq!(split_ner(all[..3].to_vec(), 3, 0.1).1.len(), 1);
    }

    #[test]
    fn atomic_write_creates_parents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, b"x").unwrap();
        write_atomic(&p, b"y").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"y");
        assert!(!dir.path().join("a/b/c.txt.tmp").exists());
    }

    #[test]
    fn report_names_malformed_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"task\":\"nli\"}").unwrap();
        let e = report(std::slice::from_ref(&p)).unwrap_err();
        assert!(e.to_string().contains("bad.json"), "{e}");
        assert!(matches!(report(&[]), Err(CliError::Usage(_))));
    }
}
