//! Conjugate Gibbs blocks: loadings rows, residual variances and spline coefficients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::truncnorm::normal_above;
use crate::error::{NiftyError, Result};
use crate::linalg::{cholesky, gaussian_from_precision};
use crate::model::{basis_row, DataMatrix, MonotoneSpline, NiftyState, PiecewiseLinear};
use crate::scalar::Scalar;

fn standard_normals<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Gaussian conditional of one loadings row, restricted to the `active` factors.
#[derive(Debug, Clone)]
pub struct LoadingsRowPosterior<T: Scalar> {
    /// Factor indices the row may load on; the others are held at zero.
    pub active: Vec<usize>,
    /// `diag(1 / (tau gamma_jh)) + sigma_j^{-2} eta^T eta` over the active factors.
    pub precision: DMatrix<T>,
    /// `sigma_j^{-2} eta^T x_j` over the active factors.
    pub linear: DVector<T>,
}

impl<T: Scalar> LoadingsRowPosterior<T> {
    pub fn new(
        j: usize,
        state: &NiftyState<T>,
        data: &DataMatrix<T>,
        eta: &DMatrix<T>,
        active: Vec<usize>,
    ) -> Self {
        let inv_var = T::one() / state.residual_variances[j];
        let x = data.values().column(j);
        let m = active.len();
        let mut precision = DMatrix::zeros(m, m);
        let mut linear = DVector::zeros(m);
        for (a, &ha) in active.iter().enumerate() {
            let col_a = eta.column(ha);
            linear[a] = col_a.dot(&x) * inv_var;
            for (b, &hb) in active.iter().enumerate().skip(a) {
                let v = col_a.dot(&eta.column(hb)) * inv_var;
                precision[(a, b)] = v;
                precision[(b, a)] = v;
            }
            precision[(a, a)] += T::one() / (state.global_scale * state.local_scales[(j, ha)]);
        }
        Self {
            active,
            precision,
            linear,
        }
    }

    pub fn mean(&self) -> Result<DVector<T>> {
        Ok(cholesky(self.precision.clone(), "loadings precision")?.solve(&self.linear))
    }

    pub fn covariance(&self) -> Result<DMatrix<T>> {
        Ok(cholesky(self.precision.clone(), "loadings precision")?.inverse())
    }

    /// Draw the full length-`H` row (inactive entries zero).
    pub fn sample<R: Rng + ?Sized>(&self, h: usize, rng: &mut R) -> Result<DVector<T>> {
        let z = standard_normals(self.active.len(), rng);
        let (_, draw) = gaussian_from_precision(
            self.precision.clone(),
            &self.linear,
            &z,
            "loadings precision",
        )?;
        let mut row = DVector::zeros(h);
        for (a, &ha) in self.active.iter().enumerate() {
            row[ha] = draw[a];
        }
        Ok(row)
    }
}

/// Factors that feature `j` may load on: the anchor feature for location
/// `k < anchor_count` loads only on factors mapped from `k`.
pub fn active_factors<T: Scalar>(
    state: &NiftyState<T>,
    j: usize,
    anchor_count: usize,
) -> Vec<usize> {
    (0..state.h())
        .filter(|&h| j >= anchor_count || state.assignment.location_of(h) == j)
        .collect()
}

/// Draw row `j` of the loadings from its conjugate Gaussian conditional.
pub fn sample_loadings_row<T: Scalar, R: Rng + ?Sized>(
    j: usize,
    state: &NiftyState<T>,
    data: &DataMatrix<T>,
    eta: &DMatrix<T>,
    anchor_count: usize,
    rng: &mut R,
) -> Result<DVector<T>> {
    LoadingsRowPosterior::new(j, state, data, eta, active_factors(state, j, anchor_count))
        .sample(state.h(), rng)
}

/// Redraw every loadings row in place.
pub fn update_loadings<T: Scalar, R: Rng + ?Sized>(
    state: &mut NiftyState<T>,
    data: &DataMatrix<T>,
    eta: &DMatrix<T>,
    anchor_count: usize,
    rng: &mut R,
) -> Result<()> {
    for j in 0..state.p() {
        let row = sample_loadings_row(j, state, data, eta, anchor_count, rng)?;
        state.loadings.set_row(j, &row.transpose());
    }
    Ok(())
}

/// Shape and rate of the Gamma conditional of `sigma_j^{-2}`.
pub fn precision_conditional<T: Scalar>(
    j: usize,
    state: &NiftyState<T>,
    data: &DataMatrix<T>,
    eta: &DMatrix<T>,
    a_sigma: f64,
    b_sigma: f64,
) -> (f64, f64) {
    let loadings = state.loadings.row(j);
    let rss = (0..data.n()).fold(0.0, |acc, i| {
        let r = data.values()[(i, j)] - loadings.dot(&eta.row(i));
        acc + r.as_f64() * r.as_f64()
    });
    (a_sigma + 0.5 * data.n() as f64, b_sigma + 0.5 * rss)
}

/// Draw `sigma_j^2` for every feature not marked `fixed`; fixed entries are
/// returned unchanged.
pub fn sample_residual_variances<T: Scalar, R: Rng + ?Sized>(
    state: &NiftyState<T>,
    data: &DataMatrix<T>,
    eta: &DMatrix<T>,
    a_sigma: f64,
    b_sigma: f64,
    fixed: &[bool],
    rng: &mut R,
) -> Result<DVector<T>> {
    let mut out = state.residual_variances.clone();
    for j in 0..state.p() {
        if fixed.get(j).copied().unwrap_or(false) {
            continue;
        }
        let (shape, rate) = precision_conditional(j, state, data, eta, a_sigma, b_sigma);
        let gamma = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| NiftyError::Numerical(format!("residual precision: {e}")))?;
        out[j] = T::of(1.0 / gamma.sample(rng));
    }
    Ok(out)
}

/// Joint Gaussian conditional of all spline coefficients, stacked as
/// `[alpha_0h, alpha_1h, .., alpha_Lh]` for `h = 1..H`, before the slope
/// truncation is applied.
#[derive(Debug, Clone)]
pub struct SplinePosterior<T: Scalar> {
    pub pieces: usize,
    pub factors: usize,
    pub precision: DMatrix<T>,
    pub linear: DVector<T>,
}

impl<T: Scalar> SplinePosterior<T> {
    pub fn new(state: &NiftyState<T>, data: &DataMatrix<T>, sigma_a_sq: f64) -> Self {
        let (n, h, k) = (state.n(), state.h(), state.k());
        let pieces = state.pieces();
        let width = pieces + 1;
        let x = data.values();

        // basis[k] is the N x (L+1) design of location k
        let mut row = vec![T::zero(); width];
        let basis: Vec<DMatrix<T>> = (0..k)
            .map(|loc| {
                let mut b = DMatrix::zeros(n, width);
                for i in 0..n {
                    basis_row(state.latent_locations[(i, loc)], pieces, &mut row);
                    for (c, &v) in row.iter().enumerate() {
                        b[(i, c)] = v;
                    }
                }
                b
            })
            .collect();

        let inv_var = state.residual_variances.map(|v| T::one() / v);
        let weighted = DMatrix::from_fn(state.p(), h, |j, c| state.loadings[(j, c)] * inv_var[j]);
        // G = Lambda^T Sigma^{-1} Lambda, M = X Sigma^{-1} Lambda
        let g = state.loadings.transpose() * &weighted;
        let m = x * &weighted;

        let dim = h * width;
        let mut precision = DMatrix::zeros(dim, dim);
        let mut linear = DVector::zeros(dim);
        let locs = state.assignment.as_slice();
        for a in 0..h {
            let ba = &basis[locs[a]];
            let lin = ba.transpose() * m.column(a);
            linear.rows_mut(a * width, width).copy_from(&lin);
            for b in a..h {
                if g[(a, b)] == T::zero() {
                    continue;
                }
                let cross = (ba.transpose() * &basis[locs[b]]) * g[(a, b)];
                precision
                    .view_mut((a * width, b * width), (width, width))
                    .copy_from(&cross);
                if b != a {
                    precision
                        .view_mut((b * width, a * width), (width, width))
                        .copy_from(&cross.transpose());
                }
            }
        }
        let prior = T::one() / T::of(sigma_a_sq);
        for d in 0..dim {
            precision[(d, d)] += prior;
        }
        Self {
            pieces,
            factors: h,
            precision,
            linear,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// True for slope coordinates (constrained to be non-negative).
    pub fn is_slope(&self, d: usize) -> bool {
        !d.is_multiple_of(self.pieces + 1)
    }

    /// Mean of the untruncated Gaussian.
    pub fn unconstrained_mean(&self) -> Result<DVector<T>> {
        Ok(cholesky(self.precision.clone(), "spline precision")?.solve(&self.linear))
    }

    /// Mode of the truncated conditional: minimises
    /// `1/2 a^T Q a - c^T a` subject to slopes `>= 0` by projected coordinate descent.
    pub fn constrained_mode(&self, tol: f64, max_sweeps: usize) -> DVector<T> {
        let mut a = DVector::zeros(self.dim());
        for _ in 0..max_sweeps {
            let mut change = 0.0f64;
            for d in 0..self.dim() {
                let q = self.precision[(d, d)];
                let rest = self.precision.row(d).dot(&a.transpose()) - q * a[d];
                let mut v = (self.linear[d] - rest) / q;
                if self.is_slope(d) {
                    v = v.max(T::zero());
                }
                change = change.max((v - a[d]).abs().as_f64());
                a[d] = v;
            }
            if change < tol {
                break;
            }
        }
        a
    }

    /// One systematic-scan Gibbs sweep over the coordinates of the truncated Gaussian.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&self, current: &mut DVector<T>, rng: &mut R) {
        for d in 0..self.dim() {
            let q = self.precision[(d, d)];
            let rest = self.precision.row(d).dot(&current.transpose()) - q * current[d];
            let mean = ((self.linear[d] - rest) / q).as_f64();
            let sd = (T::one() / q).sqrt().as_f64();
            current[d] = if self.is_slope(d) {
                T::of(normal_above(mean, sd, 0.0, rng))
            } else {
                T::of(mean + sd * rng.sample::<f64, _>(StandardNormal))
            };
        }
    }

    /// Exact draw from the truncated Gaussian when one of `tries` unconstrained
    /// joint draws lands in the feasible set; otherwise `sweeps` Gibbs sweeps
    /// started from `current`. Both branches leave the truncated Gaussian
    /// invariant and the branch probability does not depend on `current`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        current: &DVector<T>,
        tries: usize,
        sweeps: usize,
        rng: &mut R,
    ) -> Result<DVector<T>> {
        if tries > 0 {
            let chol = cholesky(self.precision.clone(), "spline precision")?;
            let mean = chol.solve(&self.linear);
            let lt = chol.l().transpose();
            for _ in 0..tries {
                let z = standard_normals(self.dim(), rng);
                let offset = lt
                    .solve_upper_triangular(&z)
                    .ok_or_else(|| NiftyError::Numerical("singular spline precision".into()))?;
                let draw = &mean + offset;
                if (0..self.dim()).all(|d| !self.is_slope(d) || draw[d] >= T::zero()) {
                    return Ok(draw);
                }
            }
        }
        let mut next = current.clone();
        for _ in 0..sweeps.max(1) {
            self.gibbs_sweep(&mut next, rng);
        }
        Ok(next)
    }

    /// Split a stacked coefficient vector back into one spline per factor.
    pub fn unstack(&self, coefs: &DVector<T>) -> Result<Vec<MonotoneSpline<T>>> {
        let width = self.pieces + 1;
        (0..self.factors)
            .map(|h| {
                PiecewiseLinear::from_coefficients(coefs.rows(h * width, width).as_slice())?
                    .try_into()
            })
            .collect()
    }
}

/// Stack the current splines as `[alpha_0h, alpha_1h, .., alpha_Lh]_h`.
pub fn stack_splines<T: Scalar>(splines: &[MonotoneSpline<T>]) -> DVector<T> {
    DVector::from_iterator(
        splines.iter().map(|s| s.pieces() + 1).sum(),
        splines.iter().flat_map(|s| s.coefficients()),
    )
}

/// Redraw all spline coefficients from their (slope-truncated) Gaussian conditional.
pub fn sample_spline_coefficients<T: Scalar, R: Rng + ?Sized>(
    state: &NiftyState<T>,
    data: &DataMatrix<T>,
    sigma_a_sq: f64,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vec<MonotoneSpline<T>>> {
    let post = SplinePosterior::new(state, data, sigma_a_sq);
    let draw = post.sample(&stack_splines(&state.splines), 4, sweeps, rng)?;
    post.unstack(&draw)
}
