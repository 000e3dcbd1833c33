//! MALA-within-Gibbs posterior sampler.

mod chain;
mod conjugate;
mod latent;
mod shrinkage;
pub mod truncnorm;

pub use chain::{
    gibbs_sweep, initial_state, log_posterior, run_chain, run_chain_stream, ChainDiagnostics,
    PosteriorChain, SweepSettings, BLOCK_NAMES,
};
pub use conjugate::{
    active_factors, precision_conditional, sample_loadings_row, sample_residual_variances,
    sample_spline_coefficients, stack_splines, update_loadings, LoadingsRowPosterior,
    SplinePosterior,
};
pub use latent::{mala_step, mala_step_with_noise, u_log_target, uniform_penalty, MalaOutcome};
pub use shrinkage::{
    auxiliary_conditional, global_conditional, inverse_gamma, local_conditional, sample_shrinkage,
    ShrinkageAux,
};
