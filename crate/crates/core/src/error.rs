use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),

    #[error("unknown section label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("empty sequence")]
    EmptySequence,

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("degenerate stacking set: {0}")]
    DegenerateStackingSet(String),

    #[error("need at least two classes, found {0}")]
    SingleClass(usize),

    #[error("length mismatch: {predictions} predictions vs {gold} gold labels")]
    LengthMismatch { predictions: usize, gold: usize },

    #[error("invalid fold count {k} for {n} reports")]
    InvalidFolds { k: usize, n: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding file {path}: line {line} has dimension {found}, expected {expected}")]
    EmbeddingDimension {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("annotation error in {path}: {message}")]
    Annotation { path: PathBuf, message: String },

    #[error("unmapped annotation labels: {0:?}")]
    UnmappedLabels(Vec<String>),

    #[error("orphan file without partner: {0}")]
    OrphanFile(PathBuf),

    #[error("invalid model bundle: {0}")]
    Bundle(String),

    #[error("feature version mismatch: bundle has {found}, this build expects {expected}")]
    FeatureVersion { expected: u32, found: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
