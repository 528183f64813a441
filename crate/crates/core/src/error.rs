use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("input is constant")]
    ConstantInput,

    #[error("{op} supports dimension at most {max}, got {dim}")]
    TooLarge { op: &'static str, dim: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ridge system is not positive definite even after jitter")]
    DegenerateGram,

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("network is not positively homogeneous: {0}")]
    NotHomogeneous(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("record count mismatch: {0}")]
    CountMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
