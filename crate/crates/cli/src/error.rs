use std::path::{Path, PathBuf};

use serde::Serialize;
use signform_core::hyperopt::HyperoptError;
use signform_core::infotheory::InfoError;
use signform_core::lexicon::LexiconError;
use signform_core::phonesthemes::PhonesthemeError;
use signform_core::phonolm::LmError;
use signform_core::semspace::PcaError;
use signform_core::stats::StatsError;
use signform_core::synthbench::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Phonestheme(#[from] PhonesthemeError),
    #[error(transparent)]
    Hyperopt(#[from] HyperoptError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{failed} of {total} validation criteria failed")]
    ValidationFailed { failed: usize, total: usize },
    #[error("{language}: {source}")]
    Language { language: String, source: Box<CliError> },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn in_language(self, language: &str) -> Self {
        match self {
            e @ CliError::Language { .. } => e,
            e => CliError::Language { language: language.to_string(), source: Box::new(e) },
        }
    }

    /// Stage that failed, for the machine-readable error record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Lexicon(_) => "lexicon",
            CliError::Pca(_) => "semspace",
            CliError::Lm(_) => "phonolm",
            CliError::Info(_) => "infotheory",
            CliError::Stats(_) => "stats",
            CliError::Phonestheme(_) => "phonesthemes",
            CliError::Hyperopt(_) => "hyperopt",
            CliError::Synth(_) => "synthbench",
            CliError::Json(_) => "json",
            CliError::Csv(_) => "csv",
            CliError::ValidationFailed { .. } => "validation",
            CliError::Language { source, .. } => source.kind(),
        }
    }

    pub fn record(&self) -> ErrorRecord {
        let (language, message) = match self {
            CliError::Language { language, source } => (Some(language.clone()), source.to_string()),
            e => (None, e.to_string()),
        };
        ErrorRecord { kind: self.kind().to_string(), message, language }
    }
}

/// `{"error": {...}}` as printed on stderr and stored in batch reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub language: Option<String>,
}

impl ErrorRecord {
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
