use thiserror::Error;

/// Errors produced by the tcKAE library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: expected shape {exp_rows}x{exp_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        op: &'static str,
        exp_rows: usize,
        exp_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: index {index} out of bounds for dimension of size {size}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        size: usize,
    },

    #[error("gradient target must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error("batch window has {actual} columns but this loss needs at least {required}")]
    WindowTooShort { required: usize, actual: usize },

    #[error("temporal consistency loss needs a batch size of at least 2, got {m}")]
    BatchTooSmall { m: usize },

    #[error("training set of {n_train} columns cannot supply windows of {window} columns; largest feasible batch size is {max_m}")]
    TrainSetTooSmall {
        n_train: usize,
        window: usize,
        max_m: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch origin {origin} (total = {value})")]
    NonFiniteLoss {
        epoch: usize,
        origin: usize,
        value: f64,
    },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("dataset is noisy (SNR {snr_db} dB) but carries no clean reference for evaluation")]
    MissingCleanReference { snr_db: f64 },

    #[error("{path}: bad magic bytes, expected {expected:?}")]
    BadMagic { path: String, expected: [u8; 4] },

    #[error("{path}: unsupported format version {found}, this build reads version {supported}")]
    BadVersion {
        path: String,
        found: u32,
        supported: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes but found {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
