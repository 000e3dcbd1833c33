//! Evaluation metrics: 1-D and sliced Wasserstein-2 distances, a
//! Kolmogorov-Smirnov uniformity check and factor-model covariance estimators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{NiftyError, Result};
use crate::linalg::{sample_covariance, sorted};
use crate::model::DataMatrix;
use crate::postprocess::AlignedChain;
use crate::scalar::Scalar;

/// Default number of random directions for [`sliced_wasserstein`].
pub const DEFAULT_PROJECTIONS: usize = 100;

/// Wasserstein-2 distance between two equally sized empirical distributions,
/// using the sorted (quantile) coupling.
pub fn wasserstein2_1d<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(NiftyError::Shape(
            "Wasserstein distance of an empty sample".into(),
        ));
    }
    if a.len() != b.len() {
        return Err(NiftyError::Shape(format!(
            "Wasserstein samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(w2_sorted(&sorted(a), &sorted(b)))
}

fn w2_sorted<T: Scalar>(a: &[T], b: &[T]) -> T {
    let ss = a
        .iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    (ss / T::count(a.len())).sqrt()
}

/// Reduce a sorted sample to `m` empirical quantiles at levels `(i - 1/2) / m`
/// (left-continuous inverse CDF). For `m` equal to the sample size this is the
/// identity.
fn quantile_grid<T: Scalar>(sorted: &[T], m: usize) -> Vec<T> {
    let n = sorted.len();
    if n == m {
        return sorted.to_vec();
    }
    (1..=m)
        .map(|i| {
            let p = (i as f64 - 0.5) / m as f64;
            let idx = ((p * n as f64).ceil() as usize).clamp(1, n);
            sorted[idx - 1]
        })
        .collect()
}

/// Sliced-Wasserstein estimate together with its Monte Carlo standard error.
#[derive(Debug, Clone, Serialize)]
pub struct SlicedWasserstein {
    pub distance: f64,
    pub std_error: f64,
    pub projections: usize,
    pub per_projection: Vec<f64>,
}

/// Average 1-D Wasserstein-2 distance over `n_projections` directions drawn
/// uniformly from the unit sphere.
pub fn sliced_wasserstein<T: Scalar, R: Rng + ?Sized>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    n_projections: usize,
    rng: &mut R,
) -> Result<T> {
    Ok(T::of(
        sliced_wasserstein_report(x, y, n_projections, rng)?.distance,
    ))
}

pub fn sliced_wasserstein_report<T: Scalar, R: Rng + ?Sized>(
    x: &DMatrix<T>,
    y: &DMatrix<T>,
    n_projections: usize,
    rng: &mut R,
) -> Result<SlicedWasserstein> {
    let p = x.ncols();
    if p != y.ncols() {
        return Err(NiftyError::Shape(format!(
            "point clouds differ in dimension: {} vs {}",
            p,
            y.ncols()
        )));
    }
    if n_projections == 0 {
        return Err(NiftyError::Config("need at least one projection".into()));
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(NiftyError::Shape("empty point cloud".into()));
    }
    let m = x.nrows().min(y.nrows());
    let mut per_projection = Vec::with_capacity(n_projections);
    for _ in 0..n_projections {
        let theta = random_direction::<T, R>(p, rng);
        let px = sorted((x * &theta).as_slice());
        let py = sorted((y * &theta).as_slice());
        let d = w2_sorted(&quantile_grid(&px, m), &quantile_grid(&py, m));
        per_projection.push(d.as_f64());
    }
    let k = per_projection.len() as f64;
    let mean = per_projection.iter().sum::<f64>() / k;
    let std_error = if per_projection.len() > 1 {
        let var = per_projection
            .iter()
            .map(|d| (d - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    Ok(SlicedWasserstein {
        distance: mean,
        std_error,
        projections: n_projections,
        per_projection,
    })
}

fn random_direction<T: Scalar, R: Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<T> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return DVector::from_iterator(p, v.into_iter().map(|x| T::of(x / norm)));
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic against `U(0, 1)`.
pub fn ks_to_uniform<T: Scalar>(u: &[T]) -> Result<T> {
    if u.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(NiftyError::Domain("KS input must lie in [0, 1]".into()));
    }
    if u.is_empty() {
        return Err(NiftyError::Shape("KS statistic of an empty sample".into()));
    }
    let n = T::count(u.len());
    Ok(sorted(u).iter().enumerate().fold(T::zero(), |d, (i, &v)| {
        let above = T::count(i + 1) / n - v;
        let below = v - T::count(i) / n;
        d.max(above).max(below)
    }))
}

/// The three covariance estimates compared in the distributional-shift demonstration.
#[derive(Debug, Clone)]
pub struct CovarianceEstimates<T: Scalar> {
    /// Sample covariance of the data.
    pub empirical: DMatrix<T>,
    /// `Lambda Lambda^T + Sigma` from posterior means (assumes `cov(eta) = I`).
    pub naive: DMatrix<T>,
    /// `Lambda cov(eta_hat) Lambda^T + Sigma` with posterior-mean factors.
    pub corrected: DMatrix<T>,
}

/// Covariance estimators on the observed (non-anchor) features of an aligned chain.
///
/// `data` holds the observed features only; the anchor rows of the loadings
/// are dropped before forming the model-based estimates.
pub fn covariance_estimators<T: Scalar>(
    chain: &AlignedChain<T>,
    data: &DataMatrix<T>,
) -> Result<CovarianceEstimates<T>> {
    let first = chain.samples.first().ok_or(NiftyError::EmptyChain)?;
    let offset = chain.anchor_count;
    let p_total = first.loadings.nrows();
    if p_total != offset + data.p() || first.latent_locations.nrows() != data.n() {
        return Err(NiftyError::Shape(format!(
            "chain has {} features ({offset} anchors) and {} rows; data is {}x{}",
            p_total,
            first.latent_locations.nrows(),
            data.n(),
            data.p()
        )));
    }
    let m = T::count(chain.samples.len());
    let h = first.loadings.ncols();
    let mut lambda = DMatrix::<T>::zeros(data.p(), h);
    let mut sigma = DVector::<T>::zeros(data.p());
    let mut eta = DMatrix::<T>::zeros(data.n(), h);
    for s in &chain.samples {
        lambda += s.loadings.rows(offset, data.p());
        sigma += s.residual_variances.rows(offset, data.p());
        eta += s.factor_matrix();
    }
    lambda /= m;
    sigma /= m;
    eta /= m;

    let diag = DMatrix::from_diagonal(&sigma);
    let naive = &lambda * lambda.transpose() + &diag;
    let corrected = &lambda * sample_covariance(&eta) * lambda.transpose() + &diag;
    Ok(CovarianceEstimates {
        empirical: sample_covariance(data.values()),
        naive: symmetrize(naive),
        corrected: symmetrize(corrected),
    })
}

fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::of(0.5)
}
