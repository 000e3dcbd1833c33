//! Half-Cauchy shrinkage via inverse-Gamma parameter expansion.
//!
//! With `lambda_jh ~ N(0, tau gamma_jh)`, `sqrt(gamma_jh)` and `sqrt(tau)` are
//! standard half-Cauchy. Writing `gamma | a ~ IG(1/2, 1/a)`, `a ~ IG(1/2, 1)`
//! (and likewise `tau | xi`, `xi`) makes every conditional inverse-Gamma.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{NiftyError, Result};
use crate::model::NiftyState;
use crate::scalar::Scalar;

/// Auxiliary variables of the parameter expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageAux<T: Scalar> {
    /// One per local scale `gamma_jh`.
    pub local: DMatrix<T>,
    /// Auxiliary of the global scale `tau`.
    pub global: T,
}

impl<T: Scalar> ShrinkageAux<T> {
    pub fn ones(p: usize, h: usize) -> Self {
        Self {
            local: DMatrix::from_element(p, h, T::one()),
            global: T::one(),
        }
    }
}

/// Draw from `IG(shape, rate)`.
pub fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| NiftyError::Numerical(format!("inverse gamma({shape}, {rate}): {e}")))?;
    Ok(1.0 / g.sample(rng))
}

/// Shape and rate of the `gamma_jh` conditional.
pub fn local_conditional(lambda: f64, tau: f64, aux: f64) -> (f64, f64) {
    (1.0, 1.0 / aux + lambda * lambda / (2.0 * tau))
}

/// Shape and rate of the conditional of the auxiliary attached to a scale `s`
/// (`gamma_jh` or `tau`).
pub fn auxiliary_conditional(scale: f64) -> (f64, f64) {
    (1.0, 1.0 + 1.0 / scale)
}

/// Shape and rate of the `tau` conditional given the free loadings.
pub fn global_conditional<T: Scalar>(
    state: &NiftyState<T>,
    free: &DMatrix<bool>,
    aux: f64,
) -> (f64, f64) {
    let mut count = 0usize;
    let mut ss = 0.0;
    for ((&l, &g), &f) in state
        .loadings
        .iter()
        .zip(state.local_scales.iter())
        .zip(free.iter())
    {
        if f {
            count += 1;
            ss += l.as_f64() * l.as_f64() / g.as_f64();
        }
    }
    (0.5 * (count as f64 + 1.0), 1.0 / aux + 0.5 * ss)
}

/// Update `gamma`, `tau` and their auxiliaries in place. Entries with
/// `free == false` are structural zeros: their `gamma` is redrawn from its
/// prior and they do not inform `tau`.
pub fn sample_shrinkage<T: Scalar, R: Rng + ?Sized>(
    state: &mut NiftyState<T>,
    aux: &mut ShrinkageAux<T>,
    free: &DMatrix<bool>,
    rng: &mut R,
) -> Result<()> {
    let tau = state.global_scale.as_f64();
    for j in 0..state.p() {
        for h in 0..state.h() {
            let lambda = if free[(j, h)] {
                state.loadings[(j, h)].as_f64()
            } else {
                0.0
            };
            let (shape, rate) = local_conditional(lambda, tau, aux.local[(j, h)].as_f64());
            let gamma = inverse_gamma(shape, rate, rng)?;
            state.local_scales[(j, h)] = T::of(gamma);
            let (shape, rate) = auxiliary_conditional(gamma);
            aux.local[(j, h)] = T::of(inverse_gamma(shape, rate, rng)?);
        }
    }
    let (shape, rate) = global_conditional(state, free, aux.global.as_f64());
    let tau = inverse_gamma(shape, rate, rng)?;
    state.global_scale = T::of(tau);
    let (shape, rate) = auxiliary_conditional(tau);
    aux.global = T::of(inverse_gamma(shape, rate, rng)?);
    Ok(())
}
