use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty manifest")]
    EmptyManifest,

    #[error("{}:{line}: {msg}", path.display())]
    ManifestLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),

    #[error("dimension mismatch{context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty pool")]
    EmptyPool,

    #[error("unknown domain {0}")]
    UnknownDomain(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("need at least 2 identities, found {0}")]
    TooFewIdentities(usize),

    #[error("k = {k} exceeds the number of points ({points})")]
    TooFewPoints { k: usize, points: usize },

    #[error("assignment key sets differ")]
    KeySetMismatch,

    #[error("zero-norm embedding for `{0}`")]
    ZeroNorm(String),

    #[error("empty relevant set")]
    EmptyRelevant,

    #[error("no queries tagged `{0}`")]
    NoTaggedQueries(String),

    #[error("gallery size {size} exceeds available gallery of {available}")]
    GallerySize { size: usize, available: usize },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        let context = context.into();
        Error::DimensionMismatch {
            context: if context.is_empty() {
                context
            } else {
                format!(" ({context})")
            },
            expected,
            got,
        }
    }

    /// Wraps the error with a description of what was being done.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
