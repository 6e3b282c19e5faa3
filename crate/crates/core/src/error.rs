use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // signal processing
    #[error("modality mismatch: expected {expected}, got {actual}")]
    ModalityMismatch { expected: String, actual: String },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid cutoff {cutoff_hz} Hz for sample rate {sample_rate_hz} Hz")]
    InvalidCutoff { cutoff_hz: f64, sample_rate_hz: f64 },
    #[error("invalid decimation factor {0}")]
    InvalidFactor(usize),
    #[error("series of {frames} frames is shorter than one window of {window} frames")]
    EmptySegmentation { frames: usize, window: usize },
    #[error("normalization stats cover {expected} channels, series has {actual}")]
    StatsMismatch { expected: usize, actual: usize },
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    // networks
    #[error("dimension error at layer {layer} ({kind}): {detail}")]
    Dimension {
        layer: usize,
        kind: String,
        detail: String,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    // persistence
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated {what}: needed {needed} bytes, found {found}")]
    Truncated {
        what: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("csv error at line {line}: {detail}")]
    Csv { line: usize, detail: String },
    #[error("channel mismatch: manifest declares {expected} {modality} channels, found {actual}")]
    ChannelMismatch {
        modality: String,
        expected: usize,
        actual: usize,
    },
    #[error("trial too short: {0}")]
    Trim(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("dataset directory {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(layer: usize, kind: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dimension {
            layer,
            kind: kind.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the command line tool: 1 usage, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
