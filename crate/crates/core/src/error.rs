use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("all rows are identical, the median distance is zero")]
    AllRowsIdentical,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample count mismatch: {left} vs {right}")]
    SampleCountMismatch { left: usize, right: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("target features are required when tau_y > 0")]
    MissingTargetFeatures,
    #[error("non-finite loss at optimizer step {step}")]
    NonFiniteLoss { step: usize },
    #[error("attribute cross-covariance has full rank, its nullspace is empty")]
    DegenerateNullspace,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("erasure step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("erasure state holds no completed steps")]
    EmptyState,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label vector is empty")]
    EmptyLabels,
    #[error("attribute group {0} has no samples")]
    EmptyGroup(usize),
    #[error("attribute must be binary, found {0} groups")]
    NonBinaryAttribute(usize),
    #[error("no class has samples in both attribute groups")]
    NoValidCells,
    #[error("cell (y={y}, s={s}) has {available} samples, {needed} needed")]
    InsufficientCell {
        y: usize,
        s: usize,
        available: usize,
        needed: usize,
    },
    #[error("split {0} outside [0.5, 0.95]")]
    InvalidSplit(f64),
    #[error("trade-off records out of order at step {0}")]
    OutOfOrder(usize),
    #[error("bad magic bytes, expected OBLV")]
    BadMagic,
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u32),
    #[error("file is truncated: expected {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("ragged CSV at line {line}: expected {expected} fields, found {found}")]
    RaggedCsv {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{value}` is not a non-negative integer label")]
    NonIntegerLabel { line: usize, value: String },
    #[error("line {line}: `{value}` is not a number")]
    BadNumber { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the erasure step it occurred in.
    pub fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            other => Error::Step {
                step,
                source: Box::new(other),
            },
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Step { source, .. } => source.is_numerical(),
            Error::AllRowsIdentical
            | Error::NonFiniteInput(_)
            | Error::NotPsd(_)
            | Error::NonFiniteLoss { .. }
            | Error::DegenerateNullspace => true,
            _ => false,
        }
    }
}
