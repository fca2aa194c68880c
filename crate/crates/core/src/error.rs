use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh exhausted: cube at level {level} cannot be refined past max_level {max_level}")]
    MeshExhausted { level: u32, max_level: u32 },

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation under-resolved: eps = {eps} but the mesh needs eps >= {required}")]
    TruncationUnderResolved { eps: f64, required: f64 },

    #[error("no aligned configuration at this depth: {0}")]
    NoAlignedConfiguration(String),

    #[error("check `{check}` failed: {detail}")]
    CheckFailed { check: String, detail: String },

    #[error("power iteration did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("halo cover: mesh exhausted at t = {t} with leftover ratio {leftover_ratio}")]
    HaloExhausted { t: u32, leftover_ratio: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn check(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::CheckFailed {
            check: check.into(),
            detail: detail.into(),
        }
    }
}
