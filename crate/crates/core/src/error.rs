use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("duplicate question id: {0}")]
    DuplicateQid(String),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("dataset has no questions")]
    EmptyDataset,
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("question order differs between datasets at position {0}")]
    QidOrderMismatch(usize),
    #[error("option count mismatch: {0} vs {1}")]
    OptionCountMismatch(usize, usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid layer width: {0}")]
    BadWidth(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("targets have zero variance")]
    DegenerateTargets,
    #[error("linear system is singular")]
    SingularSystem,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(String),
    #[error("questions have different option counts")]
    MixedOptionCounts,
    #[error("no beneficial features")]
    NoBeneficialFeatures,
    #[error("fewer questions ({questions}) than folds ({folds})")]
    TooFewQuestions { questions: usize, folds: usize },
    #[error("all signal values are zero")]
    AllZeroSignal,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
