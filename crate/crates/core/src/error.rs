use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimensions { width: usize, height: usize },

    #[error("pixel buffer holds {found} values, expected {expected}")]
    BufferLength { expected: usize, found: usize },

    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("score out of range: {value} at pixel {index}")]
    ScoreOutOfRange { value: f64, index: usize },

    #[error("invalid structuring element: {0}")]
    InvalidStructuringElement(String),

    #[error("lambda variant does not match the inner family ({expected} family)")]
    VariantMismatch { expected: &'static str },

    #[error("invalid lambda: {0}")]
    InvalidLambda(String),

    #[error("empty score list")]
    EmptyScores,

    #[error("score list mixes threshold and erosion values")]
    MixedVariants,

    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("alpha out of range: {0} (must lie in (0, 1))")]
    AlphaOutOfRange(f64),

    #[error("tau out of range: {0} (must lie in [0, 1])")]
    TauOutOfRange(f64),

    #[error("cannot aggregate an empty list of image evaluations")]
    EmptyEvaluation,

    #[error("dataset too small: {0} items, need at least 2")]
    DatasetTooSmall(usize),

    #[error("no seeds given")]
    NoSeeds,

    #[error("entry {id}: {source}")]
    Entry {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {0:?} in manifest")]
    DuplicateId(String),

    #[error("entry {id}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("entry {0}: score maps required for the threshold family")]
    ScoresRequired(String),

    #[error("entry {0}: ground truth required")]
    TruthRequired(String),

    #[error("invalid model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_entry(self, id: &str) -> Self {
        Error::Entry {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by user-supplied configuration rather than data.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::AlphaOutOfRange(_)
            | Error::TauOutOfRange(_)
            | Error::InvalidStructuringElement(_)
            | Error::VariantMismatch { .. }
            | Error::InvalidLambda(_)
            | Error::NoSeeds
            | Error::ScoresRequired(_)
            | Error::Model(_) => true,
            Error::Entry { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
