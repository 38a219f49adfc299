use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("dialog {dialog}: unknown {kind} label `{label}`")]
    UnknownLabel {
        dialog: String,
        kind: &'static str,
        label: String,
    },

    #[error("dialog {dialog}: {reason}")]
    InvalidDialog { dialog: String, reason: String },

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid slot lexicon: {0}")]
    InvalidLexicon(String),

    #[error("corpus has {found} dialogs, at least {required} are needed to split")]
    CorpusTooSmall { found: usize, required: usize },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sequence of {needed} tokens does not fit the context of {context}")]
    ContextOverflow { needed: usize, context: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("model/vocabulary mismatch: {0}")]
    ModelMismatch(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("invalid request: {0}")]
    Validation(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
