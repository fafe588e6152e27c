//! Crate-wide error type.
//!
//! Every fallible operation in the crate returns [`Result`]. Variants carry
//! enough context (shapes, indices, counts) that a caller can print the error
//! and know what went wrong without a backtrace.

use std::fmt;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug)]
pub enum Error {
    /// Two tensors fed to a binary op had incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An op required a tensor of a specific rank.
    RankMismatch {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    /// Reshape (or construction) where the element counts disagree.
    LengthMismatch { expected: usize, got: usize },
    /// A kernel does not fit inside the padded input.
    KernelTooLarge {
        kernel: (usize, usize),
        padded: (usize, usize),
    },
    /// An axis index was out of range for a tensor.
    AxisOutOfRange { axis: usize, rank: usize },
    /// Layer `layer` cannot consume the shape produced by its predecessor.
    NonComposable { layer: usize, reason: String },
    /// A batch fed to the network did not match the model's input shape.
    InputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// A label was >= the number of classes.
    LabelOutOfRange { label: usize, classes: usize },
    /// An operation that needs at least one sample got none.
    EmptyDataset,
    /// Response statistics were collected from too few samples for the
    /// requested statistic.
    InsufficientSamples { have: usize, need: usize },
    /// A neuron id referred to a layer or index that does not exist or is
    /// not prunable.
    InvalidNeuron {
        layer: usize,
        index: usize,
        reason: &'static str,
    },
    /// A selection asked for more neurons than the floor constraints allow.
    InfeasibleSelection { requested: usize, available: usize },
    /// Removing the given set would leave a layer below its floor.
    FloorViolation {
        layer: usize,
        width: usize,
        floor: usize,
        removing: usize,
    },
    /// The operation is structurally impossible on this model.
    Unsupported(String),
    /// A model file failed its integrity check (bad CRC or truncated).
    Checksum(String),
    /// A model file is laid out wrong (bad magic, malformed header, ...).
    ModelFormat(String),
    /// A model file has a version this build does not understand.
    ModelVersion { found: u64 },
    /// An IDX file started with the wrong magic number.
    IdxMagic { expected: u32, found: u32 },
    /// An IDX image/label pair disagreed on the number of samples.
    CountMismatch { images: usize, labels: usize },
    /// A file ended before the declared payload.
    Truncated { expected: usize, got: usize },
    /// Synthetic data was requested for a task name we do not know.
    UnknownTask(String),
    /// A split fraction produced an empty side.
    DegenerateSplit { samples: usize, fraction: f64 },
    /// A configuration value was missing, out of range, or inconsistent.
    Config(String),
    /// Wrapped I/O error.
    Io(std::io::Error),
    /// Wrapped JSON (de)serialisation error.
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::RankMismatch { op, expected, got } => {
                write!(f, "{op}: expected a rank-{expected} tensor, got shape {got:?}")
            }
            Error::LengthMismatch { expected, got } => {
                write!(f, "element count mismatch: expected {expected}, got {got}")
            }
            Error::KernelTooLarge { kernel, padded } => write!(
                f,
                "kernel {}x{} does not fit padded input {}x{}",
                kernel.0, kernel.1, padded.0, padded.1
            ),
            Error::AxisOutOfRange { axis, rank } => {
                write!(f, "axis {axis} out of range for rank-{rank} tensor")
            }
            Error::NonComposable { layer, reason } => {
                write!(f, "layer {layer} does not compose: {reason}")
            }
            Error::InputShape { expected, got } => {
                write!(f, "batch shape {got:?} does not match model input {expected:?}")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::EmptyDataset => write!(f, "operation requires a non-empty dataset"),
            Error::InsufficientSamples { have, need } => {
                write!(f, "need at least {need} samples, have {have}")
            }
            Error::InvalidNeuron { layer, index, reason } => {
                write!(f, "neuron (layer {layer}, index {index}) invalid: {reason}")
            }
            Error::InfeasibleSelection { requested, available } => write!(
                f,
                "cannot select {requested} neurons: only {available} removable under layer floors"
            ),
            Error::FloorViolation {
                layer,
                width,
                floor,
                removing,
            } => write!(
                f,
                "removing {removing} of {width} neurons from layer {layer} would break floor {floor}"
            ),
            Error::Unsupported(what) => write!(f, "unsupported: {what}"),
            Error::Checksum(detail) => write!(f, "model file integrity check failed: {detail}"),
            Error::ModelFormat(detail) => write!(f, "malformed model file: {detail}"),
            Error::ModelVersion { found } => {
                write!(f, "unsupported model file version {found}")
            }
            Error::IdxMagic { expected, found } => write!(
                f,
                "bad IDX magic: expected 0x{expected:08x}, found 0x{found:08x}"
            ),
            Error::CountMismatch { images, labels } => {
                write!(f, "IDX pair disagrees: {images} images vs {labels} labels")
            }
            Error::Truncated { expected, got } => {
                write!(f, "file truncated: expected {expected} bytes, got {got}")
            }
            Error::UnknownTask(name) => write!(f, "unknown synthetic task {name:?}"),
            Error::DegenerateSplit { samples, fraction } => write!(
                f,
                "split fraction {fraction} leaves an empty side for {samples} samples"
            ),
            Error::Config(detail) => write!(f, "invalid configuration: {detail}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
