use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown group `{0}` (expected one of g1, g4, g8, g12, g24)")]
    UnknownGroup(String),
    #[error("group construction failed for {name}: {reason}")]
    GroupConstructionFailure { name: String, reason: String },
    #[error("index {index} out of range for length {len}")]
    IndexError { index: usize, len: usize },
    #[error("group mismatch: {0}")]
    GroupMismatch(String),
    #[error("non-finite value in {0}")]
    NonFiniteValue(&'static str),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("empty reduction: {0}")]
    EmptyReduction(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelError { label: usize, classes: usize },
    #[error("cannot sample {requested} points from a cloud of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("neighborhood of {requested} points exceeds cloud size {available}")]
    NeighborhoodTooLarge { requested: usize, available: usize },
    #[error("invalid permutation: {0}")]
    PermutationError(String),
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("{}:{line}: {msg}", path.display())]
    ParseError { path: PathBuf, line: usize, msg: String },
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergenceError { epoch: usize, loss: f64 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::ParseError {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
