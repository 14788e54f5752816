use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{0} kernels have no continuous CDF; implicit reparameterization is unsupported")]
    UnsupportedKernel(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all categorical weights are zero")]
    ZeroWeights,
    #[error("mixture Kalman filter would exceed {cap} components; use shorter sequences")]
    ComponentCap { cap: usize },
    #[error("labels are empty; the loss needs at least one labeled step")]
    NoLabels,
    #[error("zero-length direction vector cannot be converted to an angle")]
    ZeroVector,
    #[error("dataset format: {0}")]
    Format(String),
    #[error("unsupported dataset version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
