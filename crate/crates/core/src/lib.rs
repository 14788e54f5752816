//! Differentiable particle filtering with mixture-density resampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode differentiation engine over dense arrays.
//! - [`kernels`] and [`mixture`]: per-dimension kernels and KDE mixtures over
//!   linear and circular state spaces.
//! - [`resample`]: discrete, relaxed, optimal-transport and mixture resamplers,
//!   each encoding its gradient estimator in the graph it builds.
//! - [`models`], [`filter`]: learnable dynamics/measurement networks and the
//!   filtering recursions, plus an exact mixture Kalman filter.
//! - [`training`], [`tasks`], [`metrics`]: losses and optimisation, dataset
//!   generators and persistence, evaluation and estimator diagnostics.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod filter;
pub mod kernels;
pub mod metrics;
pub mod mixture;
pub mod models;
pub mod resample;
pub mod rng;
pub mod special;
pub mod tasks;
pub mod training;

pub use autodiff::{Graph, ParamStore, Tensor, Var};
pub use error::{Error, Result};
pub use rng::RngStream;
