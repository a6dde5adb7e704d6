//! Error types. Each subsystem has its own enum; `Error` is the crate-wide
//! umbrella the public API returns. `ErrorClass` maps errors onto the CLI
//! exit-code contract (0 ok, 2 config, 3 data, 4 numeric).

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Internal,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("unbound variable '{0}' at evaluation")]
    UnboundVar(String),
    #[error("no variable named '{0}' in graph")]
    NoSuchVar(String),
    #[error("node {0} is not in the graph")]
    NoSuchNode(usize),
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("gradient output must be scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("gradient target node {0} does not require grad")]
    NoGrad(usize),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {index} ({layer}): expected input shape {expected}, got {got:?}")]
    Incomposable {
        index: usize,
        layer: String,
        expected: String,
        got: Vec<usize>,
    },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("bad architecture descriptor: {0}")]
    BadDescriptor(String),
    #[error("checkpoint: bad magic (expected \"DROA\")")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    BadVersion(u32),
    #[error("checkpoint: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint: truncated or malformed record data")]
    Truncated,
    #[error("checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("idx: bad magic {got:#010x}, expected {expected:#010x}")]
    BadMagic { got: u32, expected: u32 },
    #[error("idx: file truncated ({0})")]
    Truncated(String),
    #[error("idx: image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cifar: file length {len} is not a multiple of a known record size")]
    BadRecordSize { len: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("batch of {0} samples is too small to mix (need at least 2)")]
    BatchTooSmall(usize),
    #[error("augmix primitive set is empty")]
    EmptyPrimitives,
    #[error("row {row} of argument {arg} sums to {sum}, not a distribution")]
    NotADistribution { arg: usize, row: usize, sum: f64 },
}

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("grid oracle supports input dimension <= 3, got {0}")]
    GridDimension(usize),
    #[error("oracle failed: {0}")]
    OracleFailure(String),
    #[error("rho values must be positive and strictly increasing")]
    BadRhos,
}

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("unknown corruption kind '{0}'")]
    UnknownKind(String),
    #[error("{kind}: parameter {param}={value} out of range {range}")]
    ParamRange {
        kind: String,
        param: &'static str,
        value: f64,
        range: String,
    },
    #[error("{kind}: missing parameter '{param}'")]
    MissingParam { kind: String, param: &'static str },
    #[error(
        "calibration bracket violated: target {target} outside achievable \
         [{acc_hi:.4}, {acc_lo:.4}] for intensities [{lo}, {hi}]"
    )]
    BracketViolation {
        target: f64,
        acc_lo: f64,
        acc_hi: f64,
        lo: f64,
        hi: f64,
    },
    #[error("calibration anchors must be strictly decreasing in severity")]
    BadAnchors,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch} (penalty {penalty})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        penalty: f64,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Graph(GraphError::NonFinite { .. }) => ErrorClass::Numeric,
            Error::Graph(_) => ErrorClass::Internal,
            Error::Model(ModelError::UnknownPreset(_))
            | Error::Model(ModelError::BadDescriptor(_)) => ErrorClass::Config,
            Error::Model(_) => ErrorClass::Data,
            Error::Data(_) | Error::Io(_) => ErrorClass::Data,
            Error::Json(_) | Error::Invalid(_) => ErrorClass::Config,
            Error::Augment(_) => ErrorClass::Config,
            Error::Robust(RobustError::OracleFailure(_)) => ErrorClass::Numeric,
            Error::Robust(_) => ErrorClass::Config,
            Error::Corruption(CorruptionError::BracketViolation { .. }) => ErrorClass::Numeric,
            Error::Corruption(_) => ErrorClass::Config,
            Error::Train(TrainError::NonFiniteLoss { .. }) => ErrorClass::Numeric,
            Error::Train(_) => ErrorClass::Config,
        }
    }
}
