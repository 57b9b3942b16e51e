use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical or solver parameter is outside its admissible range.
    #[error("parameter `{name}` out of range: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A query fell outside the domain covered by a grid or curve.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two rasters or a raster and an operator disagree in size.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("codec error at byte {offset}: {reason}")]
    Codec { offset: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// The direct solver met a non-positive pivot.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("estimation failed: {reason}")]
    Estimation { reason: String, best_residual: Option<f64> },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("detector error: {0}")]
    Detector(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
