//! Domain types of the factor model, spline evaluation and the likelihood.

mod likelihood;
mod spline;
mod state;

pub use likelihood::{
    factor_matrix, factor_transform, gaussian_log_likelihood, log_likelihood, model_mean,
    model_means,
};
pub use spline::{basis_row, piece_index, MonotoneSpline, PiecewiseLinear};
pub use state::{DataMatrix, FactorAssignment, Hyperparameters, NiftyState};
