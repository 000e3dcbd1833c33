use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spline::MonotoneSpline;
use crate::error::{NiftyError, Result};
use crate::scalar::Scalar;

/// Observed data: `N` rows (observations) by `P` columns (features).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T: Scalar> {
    values: DMatrix<T>,
    feature_names: Option<Vec<String>>,
}

impl<T: Scalar> DataMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        if values.nrows() < 2 || values.ncols() < 1 {
            return Err(NiftyError::Shape(format!(
                "data needs N >= 2 rows and P >= 1 columns, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx % values.nrows(), idx / values.nrows());
            return Err(NiftyError::Domain(format!(
                "non-finite data entry at ({r}, {c})"
            )));
        }
        Ok(Self {
            values,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.values.ncols() {
            return Err(NiftyError::Shape(format!(
                "{} feature names for {} columns",
                names.len(),
                self.values.ncols()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(NiftyError::Shape("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// Column means.
    pub fn column_means(&self) -> DVector<T> {
        let n = T::count(self.n());
        DVector::from_iterator(self.p(), self.values.column_iter().map(|c| c.sum() / n))
    }

    /// Copy with zero-mean columns, plus the means that were removed.
    pub fn centered(&self) -> (Self, DVector<T>) {
        let means = self.column_means();
        let mut out = self.clone();
        for (mut c, &m) in out.values.column_iter_mut().zip(means.iter()) {
            c.add_scalar_mut(-m);
        }
        (out, means)
    }

    /// `[anchor | self]`: anchor columns become the leading features.
    pub fn prepend_columns(&self, anchor: &DMatrix<T>) -> Result<Self> {
        if anchor.nrows() != self.n() {
            return Err(NiftyError::Shape(format!(
                "anchor has {} rows, data has {}",
                anchor.nrows(),
                self.n()
            )));
        }
        let k = anchor.ncols();
        let values = DMatrix::from_fn(self.n(), k + self.p(), |i, j| {
            if j < k {
                anchor[(i, j)]
            } else {
                self.values[(i, j - k)]
            }
        });
        let mut out = Self::new(values)?;
        if let Some(names) = &self.feature_names {
            let mut all: Vec<String> = (1..=k).map(|c| format!("anchor_{c}")).collect();
            all.extend(names.iter().cloned());
            out.feature_names = Some(all);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> DataMatrix<U> {
        DataMatrix {
            values: self.values.map(|v| U::of(v.as_f64())),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Surjective map `h -> k_h` from factors to latent locations (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorAssignment {
    k_of_h: Vec<usize>,
    k: usize,
}

impl FactorAssignment {
    pub fn new(k_of_h: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 || k > k_of_h.len() {
            return Err(NiftyError::Config(format!(
                "need 1 <= K <= H, got K={k}, H={}",
                k_of_h.len()
            )));
        }
        let mut used = vec![false; k];
        for &loc in &k_of_h {
            if loc >= k {
                return Err(NiftyError::Config(format!(
                    "location {loc} out of range for K={k}"
                )));
            }
            used[loc] = true;
        }
        if let Some(missing) = used.iter().position(|u| !u) {
            return Err(NiftyError::Config(format!(
                "assignment is not surjective: location {missing} unused"
            )));
        }
        Ok(Self { k_of_h, k })
    }

    /// `K = H`, factor `h` on location `h`.
    pub fn independent(k: usize) -> Self {
        Self {
            k_of_h: (0..k).collect(),
            k,
        }
    }

    /// `h -> h mod K`.
    pub fn round_robin(h: usize, k: usize) -> Result<Self> {
        Self::new((0..h).map(|i| i % k.max(1)).collect(), k)
    }

    pub fn h(&self) -> usize {
        self.k_of_h.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn location_of(&self, h: usize) -> usize {
        self.k_of_h[h]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.k_of_h
    }

    /// Factor indices grouped by location.
    pub fn partitions(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.k];
        for (h, &k) in self.k_of_h.iter().enumerate() {
            parts[k].push(h);
        }
        parts
    }
}

/// One complete parameter configuration of the factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftyState<T: Scalar> {
    /// `P x H` loading matrix.
    pub loadings: DMatrix<T>,
    /// One non-decreasing mapping per factor.
    pub splines: Vec<MonotoneSpline<T>>,
    /// `N x K` latent locations in `[0, 1]`.
    pub latent_locations: DMatrix<T>,
    /// Diagonal of the residual covariance.
    pub residual_variances: DVector<T>,
    /// `P x H` local shrinkage variances `gamma_jh` (squared half-Cauchy scales).
    pub local_scales: DMatrix<T>,
    /// Global shrinkage variance `tau` (squared half-Cauchy scale).
    pub global_scale: T,
    pub assignment: FactorAssignment,
}

impl<T: Scalar> NiftyState<T> {
    pub fn n(&self) -> usize {
        self.latent_locations.nrows()
    }

    pub fn p(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn h(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn k(&self) -> usize {
        self.latent_locations.ncols()
    }

    pub fn pieces(&self) -> usize {
        self.splines.first().map_or(0, |s| s.pieces())
    }

    pub fn validate(&self) -> Result<()> {
        let (p, h) = (self.p(), self.h());
        if self.splines.len() != h || self.assignment.h() != h {
            return Err(NiftyError::Shape(format!(
                "H mismatch: loadings {h}, splines {}, assignment {}",
                self.splines.len(),
                self.assignment.h()
            )));
        }
        if self.assignment.k() != self.k() {
            return Err(NiftyError::Shape(
                "K mismatch between assignment and latent locations".into(),
            ));
        }
        if self.residual_variances.len() != p || self.local_scales.shape() != (p, h) {
            return Err(NiftyError::Shape(
                "P mismatch in variances or local scales".into(),
            ));
        }
        if self.splines.iter().any(|s| s.pieces() != self.pieces()) {
            return Err(NiftyError::Shape(
                "splines disagree on the number of pieces".into(),
            ));
        }
        if self
            .residual_variances
            .iter()
            .any(|&v| !(v > T::zero()) || !v.is_finite())
        {
            return Err(NiftyError::Domain(
                "residual variances must be positive".into(),
            ));
        }
        if self
            .local_scales
            .iter()
            .any(|&v| !(v > T::zero()) || !v.is_finite())
            || !(self.global_scale > T::zero())
        {
            return Err(NiftyError::Domain(
                "shrinkage scales must be positive".into(),
            ));
        }
        if self
            .latent_locations
            .iter()
            .any(|&u| !(u >= T::zero() && u <= T::one()))
        {
            return Err(NiftyError::Domain(
                "latent locations must lie in [0, 1]".into(),
            ));
        }
        if self.loadings.iter().any(|v| !v.is_finite()) {
            return Err(NiftyError::Domain("loadings must be finite".into()));
        }
        Ok(())
    }
}

/// Prior and run-length settings of the sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Strength of the uniform-constraint penalty.
    pub nu: f64,
    /// Prior variance of spline intercepts and (half-normal) slopes.
    pub sigma_a_sq: f64,
    /// Inverse-Gamma shape of the residual variances.
    pub a_sigma: f64,
    /// Inverse-Gamma rate of the residual variances.
    pub b_sigma: f64,
    /// Pieces per spline.
    pub pieces: usize,
    /// Initial MALA step size; adapted during burn-in.
    pub mala_step: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Residual variances (non-anchor) are held at `initial_sigma_sq`
    /// for this many leading iterations.
    pub sigma_fix_iterations: usize,
    pub initial_sigma_sq: f64,
    /// Target MALA acceptance during burn-in adaptation.
    pub target_acceptance: f64,
    /// Coordinate sweeps of the truncated-Gaussian spline update per iteration.
    pub spline_sweeps: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            nu: 1e3,
            sigma_a_sq: 1.0,
            a_sigma: 100.0,
            b_sigma: 1.0,
            pieces: 20,
            mala_step: 1e-4,
            iterations: 10_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
            sigma_fix_iterations: 1_000,
            initial_sigma_sq: 0.01,
            target_acceptance: 0.574,
            spline_sweeps: 2,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_a_sq", self.sigma_a_sq),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("mala_step", self.mala_step),
            ("initial_sigma_sq", self.initial_sigma_sq),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NiftyError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(NiftyError::Config(format!(
                "nu must be >= 0, got {}",
                self.nu
            )));
        }
        if self.pieces == 0 {
            return Err(NiftyError::Config("pieces must be >= 1".into()));
        }
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(NiftyError::Config(format!(
                "need burn_in < iterations, got {} and {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(NiftyError::Config("thin must be >= 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(NiftyError::Config(
                "target acceptance must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Number of states a run retains.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}
