use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conjugate::{
    active_factors, sample_residual_variances, sample_spline_coefficients, update_loadings,
};
use super::latent::{mala_step, uniform_penalty};
use super::shrinkage::{sample_shrinkage, ShrinkageAux};
use crate::error::{NiftyError, Result};
use crate::model::{
    factor_matrix, log_likelihood, DataMatrix, FactorAssignment, Hyperparameters, MonotoneSpline,
    NiftyState, PiecewiseLinear,
};
use crate::pretrain::AnchorSet;
use crate::scalar::Scalar;

/// Gibbs blocks in the order they run within one sweep.
pub const BLOCK_NAMES: [&str; 5] = [
    "loadings",
    "residual_variances",
    "splines",
    "latent_locations",
    "shrinkage",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainDiagnostics {
    /// Log posterior (up to a constant) of each retained state.
    pub log_posterior_trace: Vec<f64>,
    /// MALA acceptance rate after burn-in.
    pub mala_acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    /// Wall-clock seconds spent in each block, ordered as [`BLOCK_NAMES`].
    pub block_seconds: Vec<f64>,
    /// MALA step size after burn-in adaptation.
    pub final_step: f64,
}

/// Retained post-burn-in states of one chain.
#[derive(Debug, Clone)]
pub struct PosteriorChain<T: Scalar> {
    pub samples: Vec<NiftyState<T>>,
    pub diagnostics: ChainDiagnostics,
    pub config: Hyperparameters,
    pub anchor: Option<AnchorSet<T>>,
    /// Number of leading features that are anchors.
    pub anchor_count: usize,
}

/// What a single Gibbs sweep updates and with which prior settings.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub nu: f64,
    pub sigma_a_sq: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub spline_sweeps: usize,
    pub anchor_count: usize,
    /// `false` holds every residual variance at its current value.
    pub update_variances: bool,
    pub update_shrinkage: bool,
}

impl SweepSettings {
    pub fn from_hyperparameters(hp: &Hyperparameters, anchor_count: usize) -> Self {
        Self {
            nu: hp.nu,
            sigma_a_sq: hp.sigma_a_sq,
            a_sigma: hp.a_sigma,
            b_sigma: hp.b_sigma,
            spline_sweeps: hp.spline_sweeps,
            anchor_count,
            update_variances: true,
            update_shrinkage: true,
        }
    }

    /// Entries of the loading matrix that are not structurally zero.
    pub fn free_loadings<T: Scalar>(&self, state: &NiftyState<T>) -> DMatrix<bool> {
        let mut free = DMatrix::from_element(state.p(), state.h(), false);
        for j in 0..state.p() {
            for h in active_factors(state, j, self.anchor_count) {
                free[(j, h)] = true;
            }
        }
        free
    }
}

/// One full MALA-within-Gibbs sweep. Returns whether the MALA proposal was
/// accepted; block times are added to `seconds`.
pub fn gibbs_sweep<T: Scalar, R: Rng + ?Sized>(
    state: &mut NiftyState<T>,
    aux: &mut ShrinkageAux<T>,
    data: &DataMatrix<T>,
    settings: &SweepSettings,
    step: f64,
    seconds: &mut [f64; 5],
    rng: &mut R,
) -> Result<bool> {
    let mut clock = Instant::now();
    let mut lap = |slot: usize, clock: &mut Instant| {
        seconds[slot] += clock.elapsed().as_secs_f64();
        *clock = Instant::now();
    };

    let eta = factor_matrix(state);
    update_loadings(state, data, &eta, settings.anchor_count, rng)?;
    lap(0, &mut clock);

    if settings.update_variances {
        let fixed: Vec<bool> = (0..state.p()).map(|j| j < settings.anchor_count).collect();
        state.residual_variances = sample_residual_variances(
            state,
            data,
            &eta,
            settings.a_sigma,
            settings.b_sigma,
            &fixed,
            rng,
        )?;
    }
    lap(1, &mut clock);

    state.splines = sample_spline_coefficients(
        state,
        data,
        settings.sigma_a_sq,
        settings.spline_sweeps,
        rng,
    )?;
    lap(2, &mut clock);

    let outcome = mala_step(state, data, settings.nu, step, rng);
    state.latent_locations = outcome.locations;
    lap(3, &mut clock);

    if settings.update_shrinkage {
        let free = settings.free_loadings(state);
        sample_shrinkage(state, aux, &free, rng)?;
    }
    lap(4, &mut clock);
    Ok(outcome.accepted)
}

fn log_normal(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * x * x / var
}

/// Density of `s` when `sqrt(s)` is standard half-Cauchy.
fn log_squared_half_cauchy(s: f64) -> f64 {
    -PI.ln() - 0.5 * s.ln() - (1.0 + s).ln()
}

/// Joint log posterior up to the normalizing constant of the latent-location prior.
pub fn log_posterior<T: Scalar>(
    state: &NiftyState<T>,
    data: &DataMatrix<T>,
    settings: &SweepSettings,
) -> Result<f64> {
    let mut total = log_likelihood(state, data)?.as_f64();
    let tau = state.global_scale.as_f64();
    let free = settings.free_loadings(state);
    for j in 0..state.p() {
        for h in 0..state.h() {
            let gamma = state.local_scales[(j, h)].as_f64();
            if free[(j, h)] {
                total += log_normal(state.loadings[(j, h)].as_f64(), tau * gamma);
            }
            total += log_squared_half_cauchy(gamma);
        }
        if j >= settings.anchor_count {
            let s = state.residual_variances[j].as_f64();
            let (a, b) = (settings.a_sigma, settings.b_sigma);
            total += a * b.ln() - ln_gamma(a) - (a + 1.0) * s.ln() - b / s;
        }
    }
    total += log_squared_half_cauchy(tau);
    for g in &state.splines {
        total += log_normal(g.intercept().as_f64(), settings.sigma_a_sq);
        for &a in g.slopes() {
            total += 2f64.ln() + log_normal(a.as_f64(), settings.sigma_a_sq);
        }
    }
    for c in 0..state.k() {
        let col: Vec<T> = state.latent_locations.column(c).iter().copied().collect();
        total -= settings.nu * uniform_penalty(&col)?.as_f64();
    }
    Ok(total)
}

/// Lanczos approximation of `ln Gamma(x)` for `x > 0`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Starting state: latent locations at the anchor ranks, the `r`-th factor of a
/// partition mapped through `u^(r+1)`, loadings by ridge regression and unit
/// shrinkage scales.
pub fn initial_state<T: Scalar>(
    data: &DataMatrix<T>,
    anchor: &AnchorSet<T>,
    hp: &Hyperparameters,
    assignment: &FactorAssignment,
) -> Result<(NiftyState<T>, ShrinkageAux<T>)> {
    let (p, h, k) = (data.p(), assignment.h(), anchor.k());
    let mut splines = vec![MonotoneSpline::identity(hp.pieces); h];
    for members in assignment.partitions() {
        for (r, &f) in members.iter().enumerate() {
            let power = (r + 1) as i32;
            splines[f] = PiecewiseLinear::interpolate(hp.pieces, |u| u.powi(power)).try_into()?;
        }
    }
    let residual_variances = DVector::from_fn(p, |j, _| {
        if j < k {
            anchor.residual_variances[j]
        } else {
            T::of(hp.initial_sigma_sq)
        }
    });
    let mut state = NiftyState {
        loadings: DMatrix::zeros(p, h),
        splines,
        latent_locations: anchor.rank_locations(),
        residual_variances,
        local_scales: DMatrix::from_element(p, h, T::one()),
        global_scale: T::one(),
        assignment: assignment.clone(),
    };
    let eta = factor_matrix(&state);
    for j in 0..p {
        let active = active_factors(&state, j, k);
        let m = active.len();
        let mut gram = DMatrix::from_fn(m, m, |a, b| {
            eta.column(active[a]).dot(&eta.column(active[b]))
        });
        for d in 0..m {
            gram[(d, d)] += T::of(1e-6);
        }
        let rhs = DVector::from_fn(m, |a, _| {
            eta.column(active[a]).dot(&data.values().column(j))
        });
        let coef = gram
            .cholesky()
            .ok_or_else(|| {
                NiftyError::Numerical("initial loadings: singular factor Gram matrix".into())
            })?
            .solve(&rhs);
        for (a, &f) in active.iter().enumerate() {
            state.loadings[(j, f)] = coef[a];
        }
    }
    state.validate()?;
    Ok((state, ShrinkageAux::ones(p, h)))
}

fn check_inputs<T: Scalar>(
    data: &DataMatrix<T>,
    anchor: &AnchorSet<T>,
    hp: &Hyperparameters,
    assignment: &FactorAssignment,
) -> Result<()> {
    hp.validate()?;
    if anchor.n() != data.n() {
        return Err(NiftyError::Shape(format!(
            "anchor has {} rows, data has {}",
            anchor.n(),
            data.n()
        )));
    }
    if data.p() < anchor.k() {
        return Err(NiftyError::Shape(
            "data must contain the anchor columns as leading features".into(),
        ));
    }
    if assignment.k() != anchor.k() {
        return Err(NiftyError::Shape(format!(
            "assignment uses {} latent locations but there are {} anchors",
            assignment.k(),
            anchor.k()
        )));
    }
    Ok(())
}

/// Run one chain seeded from `hp.seed`.
pub fn run_chain<T: Scalar>(
    data: &DataMatrix<T>,
    anchor: &AnchorSet<T>,
    hp: &Hyperparameters,
    assignment: &FactorAssignment,
) -> Result<PosteriorChain<T>> {
    run_chain_stream(data, anchor, hp, assignment, 0)
}

/// Run one chain on RNG stream `stream` of the generator seeded by `hp.seed`.
/// `data` holds the anchor columns as its leading features.
pub fn run_chain_stream<T: Scalar>(
    data: &DataMatrix<T>,
    anchor: &AnchorSet<T>,
    hp: &Hyperparameters,
    assignment: &FactorAssignment,
    stream: u64,
) -> Result<PosteriorChain<T>> {
    check_inputs(data, anchor, hp, assignment)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(stream);
    let (mut state, mut aux) = initial_state(data, anchor, hp, assignment)?;
    let mut settings = SweepSettings::from_hyperparameters(hp, anchor.k());

    let mut log_step = hp.mala_step.ln();
    let (min_log_step, max_log_step) = (1e-14f64.ln(), 0.0);
    let mut seconds = [0.0; 5];
    let mut samples = Vec::with_capacity(hp.retained());
    let mut trace = Vec::with_capacity(hp.retained());
    let (mut burn_accepts, mut accepts) = (0usize, 0usize);

    for t in 0..hp.iterations {
        settings.update_variances = t >= hp.sigma_fix_iterations;
        let accepted = gibbs_sweep(
            &mut state,
            &mut aux,
            data,
            &settings,
            log_step.exp(),
            &mut seconds,
            &mut rng,
        )?;
        if t < hp.burn_in {
            burn_accepts += usize::from(accepted);
            let gain = 1.0 / ((t + 1) as f64).powf(0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - hp.target_acceptance;
            log_step = (log_step + gain * signal).clamp(min_log_step, max_log_step);
            if t % 100 == 0 && state.loadings.iter().any(|v| !v.is_finite()) {
                return Err(non_finite(t, &state));
            }
            continue;
        }
        accepts += usize::from(accepted);
        if (t - hp.burn_in).is_multiple_of(hp.thin) {
            let lp = log_posterior(&state, data, &settings)?;
            if !lp.is_finite() {
                return Err(non_finite(t, &state));
            }
            trace.push(lp);
            samples.push(state.clone());
        }
    }

    let post = hp.iterations - hp.burn_in;
    Ok(PosteriorChain {
        samples,
        diagnostics: ChainDiagnostics {
            log_posterior_trace: trace,
            mala_acceptance_rate: accepts as f64 / post as f64,
            burn_in_acceptance_rate: if hp.burn_in > 0 {
                burn_accepts as f64 / hp.burn_in as f64
            } else {
                0.0
            },
            block_seconds: seconds.to_vec(),
            final_step: log_step.exp(),
        },
        config: hp.clone(),
        anchor: Some(anchor.clone()),
        anchor_count: anchor.k(),
    })
}

fn non_finite<T: Scalar>(iteration: usize, state: &NiftyState<T>) -> NiftyError {
    NiftyError::NonFinite {
        iteration,
        dump: format!("{state:?}"),
    }
}
