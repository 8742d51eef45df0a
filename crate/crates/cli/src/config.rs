//! Run configuration: profile defaults, overlaid by a TOML file, overlaid
//! by `--set` and global flags, validated as a whole before any work.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nli_lab::corpus::{Source, Task};
use nli_lab::hpo::SearchSpace;
use nli_lab::model::ModelConfig;
use nli_lab::corpus::NUM_NER_TAGS;
use nli_lab::training::{Monitor, Objective, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Default output directory when neither the config nor `--out-dir` sets one.
pub const OUT_DIR_ENV: &str = "NLI_LAB_OUT_DIR";
/// Default NER corpus path when the config does not set one.
pub const NER_CORPUS_ENV: &str = "NLI_LAB_NER_CORPUS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Toy encoder and short schedules; runs on the bundled fixtures in seconds.
    Desk,
    /// Base-size encoder, 150 search trials, 5 epochs, full corpus.
    PaperFidelity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Row label used in result files and reports.
    pub model_name: String,
    pub paths: Paths,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ner: TrainSection,
    pub hpo: HpoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/corpus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/vocab.txt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner_corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub format: Source,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Language kept from multilingual sources.
    pub language: String,
    pub ner_repair: bool,
    /// Share of NER sentences held out to validate the NER phase.
    pub ner_validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub max_len: usize,
    /// Also learn subwords from the NER corpus words.
    pub include_ner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_fraction: f64,
    pub monitor: Monitor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpoSection {
    pub n_trials: usize,
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub batch_size: Vec<usize>,
}

impl TrainSection {
    pub fn to_train_config(&self, task: Objective, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            warmup_fraction: self.warmup_fraction,
            monitor: self.monitor,
            seed,
            task,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

impl HpoSection {
    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size.clone(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("nli-lab-out"), PathBuf::from)
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let paths = Paths {
            out_dir: default_out_dir(),
            corpus_dir: None,
            vocab: None,
            ner_corpus: std::env::var_os(NER_CORPUS_ENV).map(PathBuf::from),
        };
        let corpus = CorpusSection {
            language: "ar".into(),
            ner_repair: true,
            ner_validation_fraction: 0.1,
        };
        match profile {
            Profile::Desk => RunConfig {
                seed: 42,
                model_name: "desk-encoder".into(),
                paths,
                sources: Vec::new(),
                corpus,
                tokenizer: TokenizerSection {
                    vocab_size: 2000,
                    min_frequency: 1,
                    max_len: 64,
                    include_ner: true,
                },
                model: ModelSection {
                    layers: 2,
                    heads: 2,
                    hidden_dim: 32,
                    ff_dim: 64,
                    dropout_p: 0.1,
                },
                train: TrainSection {
                    learning_rate: 1e-3,
                    weight_decay: 0.01,
                    batch_size: 8,
                    max_epochs: 3,
                    patience: 1,
                    warmup_fraction: 0.1,
                    monitor: Monitor::MacroF1,
                    max_grad_norm: None,
                },
                ner: TrainSection {
                    learning_rate: 5e-4,
                    weight_decay: 0.01,
                    batch_size: 8,
                    max_epochs: 3,
                    patience: 1,
                    warmup_fraction: 0.1,
                    monitor: Monitor::MacroF1,
                    max_grad_norm: None,
                },
                hpo: HpoSection {
                    n_trials: 4,
                    learning_rate: (1e-4, 3e-3),
                    weight_decay: (0.0, 0.1),
                    batch_size: vec![4, 8],
                },
            },
            Profile::PaperFidelity => {
                let space = SearchSpace::default();
                RunConfig {
                    seed: 42,
                    model_name: "base-encoder".into(),
                    paths,
                    sources: Vec::new(),
                    corpus,
                    tokenizer: TokenizerSection {
                        vocab_size: 32000,
                        min_frequency: 2,
                        max_len: 128,
                        include_ner: true,
                    },
                    model: ModelSection {
                        layers: 12,
                        heads: 12,
                        hidden_dim: 768,
                        ff_dim: 3072,
                        dropout_p: 0.1,
                    },
                    train: TrainSection {
                        learning_rate: 2e-5,
                        weight_decay: 0.01,
                        batch_size: 16,
                        max_epochs: 5,
                        patience: 1,
                        warmup_fraction: 0.1,
                        monitor: Monitor::MacroF1,
                        max_grad_norm: None,
                    },
                    ner: TrainSection {
                        learning_rate: 5e-4,
                        weight_decay: 0.01,
                        batch_size: 16,
                        max_epochs: 3,
                        patience: 1,
                        warmup_fraction: 0.1,
                        monitor: Monitor::MacroF1,
                        max_grad_norm: None,
                    },
                    hpo: HpoSection {
                        n_trials: 150,
                        learning_rate: space.learning_rate,
                        weight_decay: space.weight_decay,
                        batch_size: space.batch_size,
                    },
                }
            }
        }
    }

    /// Profile defaults, then the file at `path`, then each `key.path=value`
    /// override; the merged result is decoded strictly and validated.
    pub fn load(profile: Profile, path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut merged = toml::Table::try_from(Self::profile(profile)).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            let file: toml::Table = toml::from_str(&text).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            merge(&mut merged, file);
        }
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.corpus_dir.clone().unwrap_or_else(|| self.paths.out_dir.join("corpus"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.vocab.clone().unwrap_or_else(|| self.paths.out_dir.join("vocab.txt"))
    }

    pub fn model_config(&self, vocab_size: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            hidden_dim: self.model.hidden_dim,
            ff_dim: self.model.ff_dim,
            vocab_size,
            max_len: self.tokenizer.max_len,
            type_vocab: 2,
            dropout_p: self.model.dropout_p,
            num_ner_tags: NUM_NER_TAGS,
            num_classes: classes,
        }
    }

    pub fn task_config(&self, task: Task) -> TrainConfig {
        self.train.to_train_config(task.into(), self.seed)
    }

    pub fn ner_config(&self) -> TrainConfig {
        self.ner.to_train_config(Objective::Ner, self.seed)
    }

    /// Checks every section against its module's own rules.
    pub fn validate(&self) -> Result<(), CliError> {
        let section = |name: &str, e: &dyn std::fmt::Display| CliError::Config(format!("[{name}] {e}"));
        // vocab size is only known once a vocabulary exists; any valid value works here
        self.model_config(self.tokenizer.vocab_size.max(1), 3)
            .validate()
            .map_err(|e| section("model", &e))?;
        self.task_config(Task::Nli).validate().map_err(|e| section("train", &e))?;
        self.ner_config().validate().map_err(|e| section("ner", &e))?;
        self.hpo.space().validate().map_err(|e| section("hpo", &e))?;
        if self.hpo.n_trials == 0 {
            return Err(section("hpo", &"n_trials must be at least 1"));
        }
        if self.tokenizer.vocab_size == 0 {
            return Err(section("tokenizer", &"vocab_size must be at least 1"));
        }
        if self.tokenizer.min_frequency == 0 {
            return Err(section("tokenizer", &"min_frequency must be at least 1"));
        }
        let f = self.corpus.ner_validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(section("corpus", &format!("ner_validation_fraction {f} is outside (0, 1)")));
        }
        if self.corpus.language.trim().is_empty() {
            return Err(section("corpus", &"language must not be empty"));
        }
        if self.model_name.trim().is_empty() {
            return Err(CliError::Config("model_name must not be empty".into()));
        }
        Ok(())
    }
}

/// Recursive table merge; non-table values in `over` replace those in `base`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a
/// bare string so `paths.out_dir=runs/x` works unquoted.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override key {key:?} is malformed")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = match node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override key {key:?}: {p} is not a section"))),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn profiles_validate() {
        for p in [Profile::Desk, Profile::PaperFidelity] {
            RunConfig::profile(p).validate().unwrap();
            RunConfig::load(p, None, &[]).unwrap();
        }
        let pf = RunConfig::profile(Profile::PaperFidelity);
        assert_eq!(pf.hpo.n_trials, 150);
        assert_eq!(pf.train.max_epochs, 5);
    }

    #[test]
    fn file_overlays_profile() {
        let f = write("seed = 7\n[train]\nlearning_rate = 0.002\n[[sources]]\nformat = \"xnli\"\npath = \"x.tsv\"\n");
        let cfg = RunConfig::load(Profile::Desk, Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.learning_rate, 0.002);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.sources[0].format, Source::Xnli);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write("[train]\nlearnin_rate = 0.1\n");
        let e = RunConfig::load(Profile::Desk, Some(f.path()), &[]).unwrap_err();
        assert!(e.to_string().contains("learnin_rate"), "{e}");
        let f = write("[extra]\nx = 1\n");
        assert!(RunConfig::load(Profile::Desk, Some(f.path()), &[]).is_err());
    }

    #[test]
    fn invalid_values_fail_before_work() {
        let e = RunConfig::load(Profile::Desk, None, &["model.heads=3".into()]).unwrap_err();
        assert!(e.to_string().contains("[model]"), "{e}");
        let e = RunConfig::load(Profile::Desk, None, &["train.warmup_fraction=1.5".into()]).unwrap_err();
        assert!(e.to_string().contains("warmup_fraction"), "{e}");
        assert!(RunConfig::load(Profile::Desk, None, &["hpo.n_trials=0".into()]).is_err());
    }

    #[test]
    fn overrides_parse_values() {
        let cfg = RunConfig::load(
            Profile::Desk,
            None,
            &["paths.out_dir=runs/a".into(), "hpo.batch_size=[2, 4]".into(), "train.max_grad_norm=1.0".into()],
        )
        .unwrap();
        assert_eq!(cfg.paths.out_dir, PathBuf::from("runs/a"));
        assert_eq!(cfg.hpo.batch_size, vec![2, 4]);
        assert_eq!(cfg.train.max_grad_norm, Some(1.0));
        assert!(RunConfig::load(Profile::Desk, None, &["nokey".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::profile(Profile::Desk);
        let f = write(&cfg.to_toml());
        assert_eq!(RunConfig::load(Profile::PaperFidelity, Some(f.path()), &[]).unwrap(), cfg);
    }
}
