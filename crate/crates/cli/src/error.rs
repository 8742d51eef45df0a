use std::path::{Path, PathBuf};

use nli_lab::corpus::CorpusError;
use nli_lab::eval::ReportError;
use nli_lab::hpo::HpoError;
use nli_lab::model::ModelError;
use nli_lab::tokenizer::TokenizerError;
use nli_lab::training::TrainError;
use thiserror::Error;

/// Every failure a command can report. Each variant has a fixed code that
/// prefixes its diagnostic line, so scripts can match on it.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("hpo: {0}")]
    Hpo(#[from] HpoError),
    #[error("report: {0}")]
    Report(#[from] ReportError),
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E01",
            CliError::Config(_) => "E02",
            CliError::Corpus(_) => "E03",
            CliError::Tokenizer(_) => "E04",
            CliError::Model(_) => "E05",
            CliError::Train(_) => "E06",
            CliError::Hpo(_) => "E07",
            CliError::Report(_) => "E08",
            CliError::Parse { .. } => "E09",
            CliError::Io { .. } => "E10",
        }
    }

    /// The single diagnostic line printed on failure.
    pub fn diagnostic(&self) -> String {
        format!("error[{}]: {self}", self.code())
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
