//! Nonlinear concept erasure.
//!
//! The pipeline alternates two steps. An encoder is trained full-batch to
//! minimise the HSIC between its output and a protected attribute while
//! keeping dependence on the original representation (and optionally the
//! task labels) visible. Its output is then re-aligned by a constrained
//! eigenvalue problem in a random-feature RKHS whose solution lies in the
//! nullspace of the attribute cross-covariance.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`kernels`] | RBF kernels, median heuristic, random Fourier features, centering |
//! | [`hsic`] | LIM, exact biased HSIC, feature-map HSIC |
//! | [`encoder`] | SiLU perceptron, HSIC loss, analytic gradients, AdamW training |
//! | [`disentangle`] | Cross-covariances, nullspace basis, eigenvalue problem, projection |
//! | [`erasure`] | The iterative driver and replay of a learned chain |
//! | [`probes`] | MLP and kernel probes, random chance |
//! | [`metrics`] | DP, Gap_rms, trade-off tables, controlled resampling |
//! | [`data`] | Embedding/label file formats and the synthetic benchmark |
//! | [`config`] | Strict JSON run configuration |
//!
//! Everything runs in `f64` on a single thread, so results are bit-for-bit
//! reproducible from the seeds.

pub mod config;
pub mod data;
pub mod disentangle;
pub mod encoder;
pub mod erasure;
mod error;
pub mod hsic;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod probes;
pub mod rng;
pub mod state;

pub use error::{Error, Result};

/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
