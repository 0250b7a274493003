//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants carry the
//! concrete quantities that violated a contract so failures are actionable
//! without a debugger.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("data length {got} does not match shape volume {expected}")]
    DataLength { expected: usize, got: usize },

    #[error("shape must be non-empty with every extent >= 1, got {shape:?}")]
    BadShape { shape: Vec<usize> },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("expected a {expected}-d tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("channel range {start}..{end} invalid for {channels} channels")]
    ChannelRange { start: usize, end: usize, channels: usize },

    #[error("{what} must be odd, got {got}")]
    EvenKernel { what: &'static str, got: usize },

    #[error("{what} must be >= 1, got {got}")]
    ZeroParam { what: &'static str, got: usize },

    #[error("kernel shape {kernel:?} incompatible with input shape {input:?}: {why}")]
    KernelMismatch { kernel: Vec<usize>, input: Vec<usize>, why: &'static str },

    #[error("spatial extent {extent} not divisible by {divisor} ({context})")]
    NotDivisible { extent: usize, divisor: usize, context: &'static str },

    #[error("batch-norm eval requested before any training step populated running stats")]
    BatchNormUninitialized,

    #[error("invalid architecture: {field} = {detail}")]
    BadArch { field: &'static str, detail: String },

    #[error("invalid config field {field}: {detail}")]
    BadConfig { field: &'static str, detail: String },

    #[error("checkpoint {path}: {problem}")]
    Checkpoint { path: PathBuf, problem: CheckpointProblem },

    #[error("non-finite value in {context} at epoch {epoch}, batch {batch}")]
    NonFiniteAt { context: String, epoch: usize, batch: usize },

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { value: f64, epoch: usize, batch: usize },

    #[error("parameter/gradient/state count mismatch: {params} params, {grads} grads, {state} state slots")]
    OptimizerArity { params: usize, grads: usize, state: usize },

    #[error("threshold must lie in (0, 1), got {got}")]
    BadThreshold { got: f64 },

    #[error("mask dimensions {left:?} and {right:?} differ")]
    MaskSize { left: (usize, usize), right: (usize, usize) },

    #[error("no contour found: no foreground points")]
    NoContour,

    #[error("contour needs at least 2 points, got {got}")]
    DegenerateContour { got: usize },

    #[error("split ratios {ratios:?} must be positive and sum to 1")]
    BadSplit { ratios: (f64, f64, f64) },

    #[error("dataset of {got} samples is below the minimum of {min}")]
    DatasetTooSmall { got: usize, min: usize },

    #[error("phantom parameters: {detail}")]
    BadPhantom { detail: String },

    #[error("pgm {path}: {detail}")]
    Pgm { path: PathBuf, detail: String },

    #[error("manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("csv {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Msg(String),
}

/// What exactly is wrong with a checkpoint file.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointProblem {
    #[error("bad magic bytes (not a checkpoint)")]
    BadMagic,
    #[error("format version {got} unsupported (expected {expected})")]
    Version { expected: u32, got: u32 },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("file truncated while reading {reading}")]
    Truncated { reading: &'static str },
    #[error("architecture mismatch on `{field}`: checkpoint has {in_file}, caller expects {expected}")]
    ArchMismatch { field: &'static str, in_file: String, expected: String },
    #[error("invalid header json: {0}")]
    Header(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// io::Error annotated with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
