//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum RegError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("image dimensions do not match: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("similarity region is empty")]
    EmptyRegion,
    #[error("region of interest is degenerate ({0:.1}x{1:.1} px, need at least {2} per side)")]
    DegenerateRoi(f64, f64, f64),
    #[error("empty point set")]
    EmptyPointSet,
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: malformed PGM: {1}")]
    PgmFormat(String, String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported document version {0} (expected {1})")]
    UnsupportedVersion(u32, u32),
}

pub type Result<T> = std::result::Result<T, RegError>;
