use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("element count mismatch: cannot view {from:?} ({from_len} elements) as {to:?} ({to_len} elements)")]
    CountMismatch { from: Vec<usize>, from_len: usize, to: Vec<usize>, to_len: usize },

    #[error("invalid tensor construction: shape {shape:?} does not hold {len} elements")]
    BadConstruction { shape: Vec<usize>, len: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("divisibility violation: {what} = {value} not divisible by {by}")]
    Divisibility { what: &'static str, value: usize, by: usize },

    #[error("missing weight slot '{0}'")]
    MissingSlot(String),

    #[error("weight slot '{slot}' has shape {got:?}, expected {want:?}")]
    SlotShape { slot: String, got: Vec<usize>, want: Vec<usize> },

    #[error("unsupported op on tape: {0}")]
    UnsupportedOp(&'static str),

    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("bad file format in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("training diverged (non-finite loss) at step {0}")]
    Diverged(usize),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
