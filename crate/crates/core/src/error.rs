use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("nothing to mask")]
    NothingToMask,
    #[error("unrepresented label `{0}`")]
    UnrepresentedLabel(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("example {0} has no gold label")]
    MissingGoldLabel(usize),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error("invalid token sequence: {0}")]
    InvalidTokens(String),
    #[error("reserved token `{0}` appears in corpus text")]
    ReservedToken(String),
    #[error("invalid mask spec: {0}")]
    InvalidMaskSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no supervised positions")]
    NoSupervisedPositions,
    #[error("unsmoothed LM forbidden")]
    UnsmoothedLm,
    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),
    #[error("record {0} has no reference")]
    MissingReference(usize),
    #[error("backend died")]
    BackendDied,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("bridge request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend reported error: {0}")]
    Remote(String),
    #[error("cannot load {expected} (format version {version}): {detail}")]
    Format {
        expected: &'static str,
        version: u32,
        detail: String,
    },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of an external backend process.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::BackendDied | Error::Protocol(_) | Error::Timeout(_) | Error::Remote(_) => true,
            Error::Stage { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
