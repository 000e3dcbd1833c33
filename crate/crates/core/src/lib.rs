//! Identifiable nonparametric Bayesian factor analysis.
//!
//! Data `x_i` in `R^P` are modelled as `x_i = Lambda eta_i + eps_i` with
//! `eta_ih = g_h(u_{i k_h})`, where each `g_h` is a monotone piecewise-linear
//! map of a uniform latent location and several factors may share a location.
//!
//! The crate covers the whole workflow:
//! * [`pretrain`]: diffusion-map embedding, intrinsic-dimension estimation and
//!   anchor features with known residual variance;
//! * [`sampler`]: MALA-within-Gibbs posterior sampling;
//! * [`postprocess`]: orthogonalisation, label/sign alignment and column
//!   normalisation of posterior samples;
//! * [`simulate`]: synthetic benchmark generators and the posterior predictive;
//! * [`metrics`]: Wasserstein, sliced-Wasserstein, KS and covariance estimators;
//! * [`rundir`]: the on-disk run-directory format used by the CLI.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the common `f64` instantiation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod pretrain;
pub mod rundir;
pub mod sampler;
mod scalar;
pub mod simulate;

pub use error::{NiftyError, Result};
pub use model::{
    DataMatrix, FactorAssignment, Hyperparameters, MonotoneSpline, NiftyState, PiecewiseLinear,
};
pub use postprocess::{AlignedChain, IdentifiedSample};
pub use pretrain::AnchorSet;
pub use sampler::PosteriorChain;
pub use scalar::Scalar;

pub type DataMatrix64 = DataMatrix<f64>;
pub type NiftyState64 = NiftyState<f64>;
pub type MonotoneSpline64 = MonotoneSpline<f64>;
pub type PiecewiseLinear64 = PiecewiseLinear<f64>;
pub type AnchorSet64 = AnchorSet<f64>;
pub type PosteriorChain64 = PosteriorChain<f64>;
pub type IdentifiedSample64 = IdentifiedSample<f64>;
pub type AlignedChain64 = AlignedChain<f64>;

pub type DataMatrix32 = DataMatrix<f32>;
pub type NiftyState32 = NiftyState<f32>;
