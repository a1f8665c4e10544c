use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unsmoothed background: rate {rate} for word index {index}")]
    UnsmoothedBackground { index: usize, rate: f64 },
    #[error("degenerate scaler: min {min} equals max {max}")]
    DegenerateScaler { min: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid epsilon {0}")]
    InvalidEpsilon(f64),
    #[error("label {label} out of range for {n_labels} labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("empty instance")]
    EmptyInstance,
    #[error("unknown client {0}")]
    UnknownClient(String),
    #[error("unknown preset {0}")]
    UnknownPreset(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("bad magic in bundle header")]
    BadMagic,
    #[error("unsupported bundle version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated tensor data: need {needed} bytes, have {available}")]
    TruncatedTensorData { needed: usize, available: usize },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("vocabulary mismatch: payload hash {payload}, model hash {model}")]
    VocabMismatch { payload: String, model: String },
    #[error("empty sketch")]
    EmptySketch,
    #[error("unregistered client {0}")]
    UnregisteredClient(String),

    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(String),
    #[error("http: {0}")]
    Http(String),
}

impl Error {
    /// Stable machine-readable code, used by the CLI, the HTTP API and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "empty_corpus",
            Error::UnsmoothedBackground { .. } => "unsmoothed_background",
            Error::DegenerateScaler { .. } => "degenerate_scaler",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidEpsilon(_) => "invalid_epsilon",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::EmptyInstance => "empty_instance",
            Error::UnknownClient(_) => "unknown_client",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::BadMagic => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::TruncatedHeader => "truncated_header",
            Error::TruncatedTensorData { .. } => "truncated_tensor_data",
            Error::HeaderMismatch(_) => "header_mismatch",
            Error::VocabMismatch { .. } => "vocabulary_mismatch",
            Error::EmptySketch => "empty_sketch",
            Error::UnregisteredClient(_) => "unregistered_client",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Http(_) => "http",
        }
    }
}
