use std::io;

use crate::criteria::FilterRef;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{op}: output side ({n} - {k}) / {stride} + 1 is not integral")]
    NonIntegralOutput {
        op: &'static str,
        n: usize,
        k: usize,
        stride: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("filter {0} is out of range")]
    FilterOutOfRange(FilterRef),

    #[error("filter {0} is already masked")]
    AlreadyMasked(FilterRef),

    #[error("selecting {requested} filters would leave a layer below {min_per_layer} filters ({available} selectable)")]
    MinFiltersViolation {
        requested: usize,
        available: usize,
        min_per_layer: usize,
    },

    #[error("no unmasked filters remain")]
    NoUnmaskedFilters,

    #[error("activation accumulator has seen no images")]
    NoImagesSeen,

    #[error("prune target {target}% is below the current pruned percentage {current}%")]
    TargetBelowCurrent { target: f64, current: f64 },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("file length {len} is not a multiple of the {record}-byte record size")]
    RecordSize { len: usize, record: usize },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{path}: {msg}")]
    Corrupt { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
