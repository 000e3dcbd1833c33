//! Seeded generators for the synthetic benchmarks and posterior-predictive draws.
//!
//! Every generator is a pure function of `(n, seed)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{NiftyError, Result};
use crate::model::{DataMatrix, FactorAssignment, PiecewiseLinear};
use crate::postprocess::IdentifiedSample;
use crate::sampler::PosteriorChain;
use crate::scalar::Scalar;

/// Standard deviation of the additive noise in every generator.
pub const NOISE_SD: f64 = 0.1;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn check_n(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(NiftyError::Config(format!(
            "need at least {min} rows, got {n}"
        )));
    }
    Ok(())
}

/// Independent Beta(0.4, 0.4) and Gamma(1, 1) coordinates plus noise; `N x 2`.
pub fn gen_setting1(n: usize, seed: u64) -> Result<DataMatrix<f64>> {
    check_n(n, 2)?;
    let mut rng = rng_for(seed);
    let beta = Beta::new(0.4, 0.4).expect("valid beta");
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut x = DMatrix::zeros(n, 2);
    for i in 0..n {
        x[(i, 0)] = beta.sample(&mut rng) + NOISE_SD * normal(&mut rng);
        x[(i, 1)] = gamma.sample(&mut rng) + NOISE_SD * normal(&mut rng);
    }
    DataMatrix::new(x)
}

/// Gaussian linear two-factor data in twenty dimensions with its ground truth.
#[derive(Debug, Clone)]
pub struct LinearFactorData {
    pub data: DataMatrix<f64>,
    /// `20 x 2`.
    pub loadings: DMatrix<f64>,
    /// `N x 2`.
    pub factors: DMatrix<f64>,
}

pub const SETTING2_P: usize = 20;

/// `x = Lambda eta + noise`, `lambda_jk ~ N(0, 1)` drawn first, `eta ~ N_2(0, I)`.
pub fn gen_setting2(n: usize, seed: u64) -> Result<LinearFactorData> {
    check_n(n, 2)?;
    let mut rng = rng_for(seed);
    let loadings = DMatrix::from_fn(SETTING2_P, 2, |_, _| normal(&mut rng));
    linear_factor_rows(loadings, n, &mut rng)
}

/// Fresh rows from a Gaussian linear factor model with the given loadings, e.g. a
/// held-out set sharing the loadings of a [`gen_setting2`] training set.
pub fn gen_linear_factor(loadings: &DMatrix<f64>, n: usize, seed: u64) -> Result<LinearFactorData> {
    check_n(n, 2)?;
    linear_factor_rows(loadings.clone(), n, &mut rng_for(seed))
}

fn linear_factor_rows(
    loadings: DMatrix<f64>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LinearFactorData> {
    let (p, h) = loadings.shape();
    let factors = DMatrix::from_fn(n, h, |_, _| normal(rng));
    let mut x = &factors * loadings.transpose();
    x.iter_mut().for_each(|v| *v += NOISE_SD * normal(rng));
    debug_assert_eq!(x.ncols(), p);
    Ok(LinearFactorData {
        data: DataMatrix::new(x)?,
        loadings,
        factors,
    })
}

/// Law of the two generators of the curved setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurveLaw {
    #[default]
    Uniform,
    /// Beta(0.5, 0.5).
    Arcsine,
}

/// `(2 z1, 2 z1^2, 2 z2, 2 z2^2, 0, .., 0)` plus noise; `N x 10`.
pub fn gen_setting3(n: usize, seed: u64, law: CurveLaw) -> Result<DataMatrix<f64>> {
    check_n(n, 2)?;
    let mut rng = rng_for(seed);
    let arcsine = Beta::new(0.5, 0.5).expect("valid beta");
    let mut x = DMatrix::zeros(n, 10);
    for i in 0..n {
        let mut z = [0.0; 2];
        for v in &mut z {
            *v = match law {
                CurveLaw::Uniform => rng.random::<f64>(),
                CurveLaw::Arcsine => arcsine.sample(&mut rng),
            };
        }
        let mean = [2.0 * z[0], 2.0 * z[0] * z[0], 2.0 * z[1], 2.0 * z[1] * z[1]];
        for j in 0..10 {
            x[(i, j)] = mean.get(j).copied().unwrap_or(0.0) + NOISE_SD * normal(&mut rng);
        }
    }
    DataMatrix::new(x)
}

/// Swiss roll in ten dimensions with its generators.
#[derive(Debug, Clone)]
pub struct SwissRoll {
    pub data: DataMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

/// Roll angle `t = 3 pi u + 3 pi / 2` placed in coordinates 5 and 6, `v` in coordinate 7.
pub fn gen_swiss_roll(n: usize, seed: u64) -> Result<SwissRoll> {
    check_n(n, 2)?;
    let mut rng = rng_for(seed);
    let mut u = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, 10);
    for i in 0..n {
        u[i] = rng.random::<f64>();
        v[i] = rng.random::<f64>();
        let t = 3.0 * PI * u[i] + 1.5 * PI;
        let mut mean = [0.0; 10];
        mean[4] = t * t.sin();
        mean[5] = t * t.cos();
        mean[6] = v[i];
        for j in 0..10 {
            x[(i, j)] = mean[j] + NOISE_SD * normal(&mut rng);
        }
    }
    Ok(SwissRoll {
        data: DataMatrix::new(x)?,
        u,
        v,
    })
}

/// Five isotropic Gaussian clusters with labels.
#[derive(Debug, Clone)]
pub struct Clusters {
    pub data: DataMatrix<f64>,
    /// Cluster index in `0..5`.
    pub labels: Vec<usize>,
}

pub const CLUSTER_COUNT: usize = 5;
pub const CLUSTER_DIM: usize = 20;
pub const DEFAULT_CLUSTER_SPACING: f64 = 10.0;

/// Cluster `c` (row `i` has `c = i mod 5`) has mean `spacing * c` on the first
/// axis and standard deviation `c + 1` in every coordinate.
pub fn gen_hetero_clusters(n: usize, seed: u64, spacing: f64) -> Result<Clusters> {
    check_n(n, CLUSTER_COUNT)?;
    let mut rng = rng_for(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % CLUSTER_COUNT).collect();
    let mut x = DMatrix::zeros(n, CLUSTER_DIM);
    for (i, &c) in labels.iter().enumerate() {
        let sd = (c + 1) as f64;
        for j in 0..CLUSTER_DIM {
            let mean = if j == 0 { spacing * c as f64 } else { 0.0 };
            x[(i, j)] = mean + sd * normal(&mut rng);
        }
    }
    Ok(Clusters {
        data: DataMatrix::new(x)?,
        labels,
    })
}

struct Draw<'a, T: Scalar> {
    loadings: &'a DMatrix<T>,
    splines: Vec<&'a PiecewiseLinear<T>>,
    variances: &'a DVector<T>,
    assignment: &'a FactorAssignment,
}

fn predictive<T: Scalar, R: Rng + ?Sized>(
    draws: &[Draw<'_, T>],
    anchor_count: usize,
    n_new: usize,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let first = draws.first().ok_or(NiftyError::EmptyChain)?;
    let p = first.loadings.nrows();
    if anchor_count > p {
        return Err(NiftyError::Shape("more anchors than features".into()));
    }
    let k = first.assignment.k();
    let mut out = DMatrix::zeros(n_new, p - anchor_count);
    let mut u = vec![T::zero(); k];
    for i in 0..n_new {
        let d = &draws[rng.random_range(0..draws.len())];
        for v in u.iter_mut() {
            *v = T::of(rng.random::<f64>());
        }
        let eta = DVector::from_iterator(
            d.splines.len(),
            d.splines
                .iter()
                .enumerate()
                .map(|(h, g)| g.eval_unchecked(u[d.assignment.location_of(h)])),
        );
        for j in anchor_count..p {
            let mean = d.loadings.row(j).transpose().dot(&eta);
            out[(i, j - anchor_count)] = mean + d.variances[j].sqrt() * T::of(normal(rng));
        }
    }
    Ok(out)
}

/// `n_new` posterior-predictive rows of the observed (non-anchor) features:
/// a uniformly chosen retained sample, fresh `u ~ U(0,1)^K`, then `Lambda g(u)` plus noise.
pub fn posterior_predictive<T: Scalar, R: Rng + ?Sized>(
    chain: &PosteriorChain<T>,
    n_new: usize,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let draws: Vec<Draw<'_, T>> = chain
        .samples
        .iter()
        .map(|s| Draw {
            loadings: &s.loadings,
            splines: s.splines.iter().map(|g| g.as_piecewise()).collect(),
            variances: &s.residual_variances,
            assignment: &s.assignment,
        })
        .collect();
    predictive(&draws, chain.anchor_count, n_new, rng)
}

/// Adds `means[j]` to column `j`, undoing [`DataMatrix::centered`] on predictive draws.
pub fn shift_columns<T: Scalar>(draws: &mut DMatrix<T>, means: &DVector<T>) -> Result<()> {
    if draws.ncols() != means.len() {
        return Err(NiftyError::Shape(format!(
            "{} columns but {} means",
            draws.ncols(),
            means.len()
        )));
    }
    for (mut c, &m) in draws.column_iter_mut().zip(means.iter()) {
        c.add_scalar_mut(m);
    }
    Ok(())
}

/// Same as [`posterior_predictive`] for post-processed samples.
pub fn posterior_predictive_identified<T: Scalar, R: Rng + ?Sized>(
    samples: &[IdentifiedSample<T>],
    anchor_count: usize,
    n_new: usize,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let draws: Vec<Draw<'_, T>> = samples
        .iter()
        .map(|s| Draw {
            loadings: &s.loadings,
            splines: s.splines.iter().collect(),
            variances: &s.residual_variances,
            assignment: &s.assignment,
        })
        .collect();
    predictive(&draws, anchor_count, n_new, rng)
}
