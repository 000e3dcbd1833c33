//! Diffusion-map pretraining: embedding, intrinsic dimension and anchor features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NiftyError, Result};
use crate::linalg::{
    least_squares, pairwise_sq_distances, ranks, symmetric_eigen_desc, upper_triangle_quantile,
};
use crate::model::{basis_row, DataMatrix};
use crate::scalar::Scalar;

/// Default number of retained diffusion coordinates.
pub const DEFAULT_Q: usize = 4;

/// Settings of the diffusion-map embedding and the dimension rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Kernel bandwidth; median pairwise distance when unset.
    pub epsilon_dm: Option<f64>,
    /// Number of retained eigenvectors; `min(4, N - 1)` when unset.
    pub q: Option<usize>,
    /// Local-covariance radius; 10th percentile of pairwise distances
    /// between diffusion coordinates when unset.
    pub epsilon_local: Option<f64>,
    pub delta: f64,
    /// Added to the estimated dimension (clamped to `Q`).
    pub dimension_offset: usize,
    /// Rotate the anchor columns towards maximal non-Gaussianity
    /// ([`kurtosis_rotation`]). Diffusion coordinates with tied eigenvalues
    /// are only determined up to a rotation within their eigenspace, and an
    /// arbitrary rotation mixes independent generators.
    #[serde(default)]
    pub unmix_anchors: bool,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            epsilon_dm: None,
            q: None,
            epsilon_local: None,
            delta: 0.5,
            dimension_offset: 0,
            unmix_anchors: false,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(e) = self.epsilon_dm {
            if !(e > 0.0 && e.is_finite()) {
                return Err(NiftyError::Config(format!(
                    "epsilon_dm must be positive, got {e}"
                )));
            }
        }
        if let Some(e) = self.epsilon_local {
            if !(e > 0.0 && e.is_finite()) {
                return Err(NiftyError::Config(format!(
                    "epsilon_local must be positive, got {e}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(NiftyError::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        let q = self.resolved_q(n);
        if q < 1 || q + 1 > n {
            return Err(NiftyError::Config(format!(
                "Q = {q} must satisfy 1 <= Q <= N - 1 = {}",
                n.saturating_sub(1)
            )));
        }
        Ok(())
    }

    pub fn resolved_q(&self, n: usize) -> usize {
        self.q.unwrap_or_else(|| DEFAULT_Q.min(n.saturating_sub(1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    DiffusionMap,
    External,
}

/// Anchor features prepended to the data, with their fixed residual variances.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<T: Scalar> {
    /// `N x K` anchor data.
    pub coordinates: DMatrix<T>,
    pub residual_variances: DVector<T>,
    pub source: AnchorSource,
}

impl<T: Scalar> AnchorSet<T> {
    pub fn new(
        coordinates: DMatrix<T>,
        residual_variances: DVector<T>,
        source: AnchorSource,
    ) -> Result<Self> {
        if coordinates.ncols() == 0 {
            return Err(NiftyError::Shape(
                "anchor set needs at least one column".into(),
            ));
        }
        if residual_variances.len() != coordinates.ncols() {
            return Err(NiftyError::Shape(format!(
                "{} anchor columns but {} residual variances",
                coordinates.ncols(),
                residual_variances.len()
            )));
        }
        if residual_variances
            .iter()
            .any(|&v| !(v > T::zero()) || !v.is_finite())
        {
            return Err(NiftyError::Domain(
                "anchor residual variances must be positive".into(),
            ));
        }
        if coordinates.iter().any(|v| !v.is_finite()) {
            return Err(NiftyError::Domain(
                "anchor coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            coordinates,
            residual_variances,
            source,
        })
    }

    pub fn k(&self) -> usize {
        self.coordinates.ncols()
    }

    pub fn n(&self) -> usize {
        self.coordinates.nrows()
    }

    /// Initial latent locations: per-column ranks divided by `N`.
    pub fn rank_locations(&self) -> DMatrix<T> {
        let n = self.n();
        let mut u = DMatrix::zeros(n, self.k());
        for c in 0..self.k() {
            let col: Vec<T> = self.coordinates.column(c).iter().copied().collect();
            for (i, r) in ranks(&col).into_iter().enumerate() {
                u[(i, c)] = T::count(r) / T::count(n);
            }
        }
        u
    }
}

/// Gaussian kernel `exp(-|x_i - x_j|^2 / epsilon^2)`.
pub fn kernel_matrix<T: Scalar>(data: &DataMatrix<T>, epsilon_dm: T) -> DMatrix<T> {
    let e2 = epsilon_dm * epsilon_dm;
    pairwise_sq_distances(data.values()).map(|d| (-d / e2).exp())
}

fn density_normalized<T: Scalar>(kernel: &DMatrix<T>) -> Result<DMatrix<T>> {
    let d = kernel.column_sum();
    if d.iter().any(|&v| !(v > T::zero())) {
        return Err(NiftyError::Degenerate("kernel has a zero row sum".into()));
    }
    Ok(DMatrix::from_fn(kernel.nrows(), kernel.ncols(), |i, j| {
        kernel[(i, j)] / (d[i] * d[j])
    }))
}

/// `L = (D^{-1} W - I) / epsilon^2` with `W_ij = k_ij / (d_i d_j)`.
pub fn normalized_laplacian<T: Scalar>(kernel: &DMatrix<T>, epsilon_dm: T) -> Result<DMatrix<T>> {
    let w = density_normalized(kernel)?;
    let dw = w.column_sum();
    if dw.iter().any(|&v| !(v > T::zero())) {
        return Err(NiftyError::Degenerate(
            "normalized kernel has a zero row sum".into(),
        ));
    }
    let n = kernel.nrows();
    let e2 = epsilon_dm * epsilon_dm;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { T::one() } else { T::zero() };
        (w[(i, j)] / dw[i] - delta) / e2
    }))
}

/// Diffusion embedding with its spectrum.
#[derive(Debug, Clone)]
pub struct DiffusionEmbedding<T: Scalar> {
    /// `N x Q`, one unit-norm eigenvector of `D^{-1} W` per column.
    pub coordinates: DMatrix<T>,
    /// Eigenvalues of `-L` for the retained columns (ascending).
    pub eigenvalues: DVector<T>,
    pub epsilon_dm: T,
}

/// Median pairwise Euclidean distance between rows.
pub fn median_distance<T: Scalar>(x: &DMatrix<T>) -> T {
    upper_triangle_quantile(&pairwise_sq_distances(x), 0.5).sqrt()
}

/// Non-trivial eigenvectors of the random-walk operator `D^{-1} W` with the
/// `Q` largest eigenvalues (equivalently the smallest non-zero eigenvalues of
/// `-L`).
pub fn diffusion_embedding<T: Scalar>(
    data: &DataMatrix<T>,
    cfg: &DiffusionConfig,
) -> Result<DiffusionEmbedding<T>> {
    let n = data.n();
    cfg.validate(n)?;
    let q = cfg.resolved_q(n);
    let eps = match cfg.epsilon_dm {
        Some(e) => T::of(e),
        None => median_distance(data.values()),
    };
    if !(eps > T::zero()) {
        return Err(NiftyError::Degenerate(
            "all rows coincide; kernel bandwidth is zero".into(),
        ));
    }
    let w = density_normalized(&kernel_matrix(data, eps))?;
    let dw = w.column_sum();
    if dw.iter().any(|&v| !(v > T::zero())) {
        return Err(NiftyError::Degenerate(
            "normalized kernel has a zero row sum".into(),
        ));
    }
    let inv_sqrt = dw.map(|v| T::one() / v.sqrt());
    let sym = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let sym = (&sym + sym.transpose()) * T::of(0.5);
    let (vals, vecs) = symmetric_eigen_desc(sym);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(NiftyError::Numerical(format!(
            "eigen-decomposition produced non-finite values (N = {n}, epsilon_dm = {eps:?})"
        )));
    }
    let e2 = eps * eps;
    let mut coords = DMatrix::zeros(n, q);
    let mut mu = DVector::zeros(q);
    for c in 0..q {
        let mut v = DVector::from_fn(n, |i, _| vecs[(i, c + 1)] * inv_sqrt[i]);
        let norm = v.norm();
        if !(norm > T::zero()) {
            return Err(NiftyError::Numerical(format!(
                "eigenvector {} vanished",
                c + 1
            )));
        }
        v /= norm;
        let tol = T::of(1e-12);
        if let Some(first) = v.iter().find(|x| x.abs() > tol) {
            if *first < T::zero() {
                v.neg_mut();
            }
        }
        coords.set_column(c, &v);
        mu[c] = (T::one() - vals[c + 1]) / e2;
    }
    Ok(DiffusionEmbedding {
        coordinates: coords,
        eigenvalues: mu,
        epsilon_dm: eps,
    })
}

/// `N x Q` diffusion coordinates (see [`diffusion_embedding`]).
pub fn diffusion_coordinates<T: Scalar>(
    data: &DataMatrix<T>,
    cfg: &DiffusionConfig,
) -> Result<DMatrix<T>> {
    Ok(diffusion_embedding(data, cfg)?.coordinates)
}

/// `(1/N) sum_i' (x_i - x_i')(x_i - x_i')^T 1{|x_i - x_i'| <= epsilon}`.
pub fn local_covariance<T: Scalar>(coords: &DMatrix<T>, i: usize, epsilon_local: T) -> DMatrix<T> {
    let (n, q) = coords.shape();
    let mut c = DMatrix::zeros(q, q);
    let e2 = epsilon_local * epsilon_local;
    let xi = coords.row(i);
    for r in 0..n {
        let diff = xi - coords.row(r);
        if diff.norm_squared() <= e2 {
            c += diff.transpose() * diff;
        }
    }
    c / T::count(n)
}

/// Mean (over rows) of the sorted local-covariance eigenvalues.
pub fn local_eigenvalue_profile<T: Scalar>(coords: &DMatrix<T>, epsilon_local: T) -> Vec<f64> {
    let (n, q) = coords.shape();
    let mut mean = vec![0.0; q];
    for i in 0..n {
        let (vals, _) = symmetric_eigen_desc(local_covariance(coords, i, epsilon_local));
        for (m, v) in mean.iter_mut().zip(vals.iter()) {
            *m += v.as_f64().max(0.0) / n as f64;
        }
    }
    mean
}

/// Dimension rule applied to a mean eigenvalue profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub k: usize,
    pub profile: Vec<f64>,
    /// `profile[m + 1] / profile[m]`.
    pub ratios: Vec<f64>,
}

/// `K = max{k : lambda_{k+1} / lambda_k >= delta}` (1-based), or 1 if no `k` qualifies.
pub fn dimension_from_profile(profile: &[f64], delta: f64) -> Result<DimensionEstimate> {
    if profile.iter().all(|&v| v == 0.0) {
        return Err(NiftyError::Degenerate(
            "all local covariance eigenvalues are zero; increase epsilon_local".into(),
        ));
    }
    let ratios: Vec<f64> = profile
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let k = ratios
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= delta)
        .map(|(m, _)| m + 1)
        .max()
        .unwrap_or(1);
    Ok(DimensionEstimate {
        k,
        profile: profile.to_vec(),
        ratios,
    })
}

pub fn estimate_dimension<T: Scalar>(
    coords: &DMatrix<T>,
    epsilon_local: T,
    delta: f64,
) -> Result<usize> {
    if coords.ncols() < 2 {
        return Err(NiftyError::Config(
            "dimension estimation needs Q >= 2".into(),
        ));
    }
    Ok(dimension_from_profile(&local_eigenvalue_profile(coords, epsilon_local), delta)?.k)
}

/// Residual variance of an anchor column regressed on the spline basis of its
/// own ranks, `RSS / (N - L - 2)`. Also returns the ranks `u* = r / N`.
pub fn anchor_residual_variance<T: Scalar>(column: &[T], pieces: usize) -> Result<(T, DVector<T>)> {
    let n = column.len();
    if pieces == 0 {
        return Err(NiftyError::Config("pieces must be at least 1".into()));
    }
    if n <= pieces + 2 {
        return Err(NiftyError::InsufficientData(format!(
            "need more than {} rows for {pieces} pieces, got {n}",
            pieces + 2
        )));
    }
    let u_star = DVector::from_iterator(
        n,
        ranks(column).into_iter().map(|r| T::count(r) / T::count(n)),
    );
    let mut design = DMatrix::zeros(n, pieces + 1);
    let mut row = vec![T::zero(); pieces + 1];
    for i in 0..n {
        basis_row(u_star[i], pieces, &mut row);
        for (c, &v) in row.iter().enumerate() {
            design[(i, c)] = v;
        }
    }
    let y = DVector::from_column_slice(column);
    let (_, rss) = least_squares(&design, &y)?;
    Ok((rss / T::count(n - pieces - 2), u_star))
}

fn excess_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let (mut s2, mut s4) = (0.0, 0.0);
    for x in v {
        let d = (x - m) * (x - m);
        s2 += d;
        s4 += d * d;
    }
    let s2 = s2 / n;
    if s2 == 0.0 {
        return 0.0;
    }
    s4 / n / (s2 * s2) - 3.0
}

const ROTATION_GRID: usize = 720;
const ROTATION_SWEEPS: usize = 20;

/// Jacobi sweeps of plane rotations maximizing the summed absolute excess
/// kurtosis of the columns. Each pair's angle is chosen on a grid over
/// `[0, pi/2)` (the contrast is `pi/2`-periodic up to column swaps and sign
/// flips); sweeps stop once every pair keeps angle zero.
pub fn kurtosis_rotation<T: Scalar>(coords: &DMatrix<T>) -> DMatrix<T> {
    let k = coords.ncols();
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|c| coords.column(c).iter().map(|v| v.as_f64()).collect())
        .collect();
    let rotate = |a: &[f64], b: &[f64], t: f64| -> (Vec<f64>, Vec<f64>) {
        let (s, c) = t.sin_cos();
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (c * x + s * y, -s * x + c * y))
            .unzip()
    };
    for _ in 0..ROTATION_SWEEPS {
        let mut moved = false;
        for a in 0..k {
            for b in a + 1..k {
                let mut best = (f64::NEG_INFINITY, 0);
                for g in 0..ROTATION_GRID {
                    let t = g as f64 / ROTATION_GRID as f64 * std::f64::consts::FRAC_PI_2;
                    let (x, y) = rotate(&cols[a], &cols[b], t);
                    let score = excess_kurtosis(&x).abs() + excess_kurtosis(&y).abs();
                    if score > best.0 + 1e-12 {
                        best = (score, g);
                    }
                }
                if best.1 != 0 {
                    let t = best.1 as f64 / ROTATION_GRID as f64 * std::f64::consts::FRAC_PI_2;
                    let (x, y) = rotate(&cols[a], &cols[b], t);
                    cols[a] = x;
                    cols[b] = y;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    DMatrix::from_fn(coords.nrows(), k, |i, c| T::of(cols[c][i]))
}

/// Everything produced by a pretraining run.
#[derive(Debug, Clone)]
pub struct PretrainReport<T: Scalar> {
    pub anchor: AnchorSet<T>,
    pub dimension: DimensionEstimate,
    pub epsilon_dm: f64,
    pub epsilon_local: f64,
    pub q: usize,
}

/// Smallest variance accepted for an anchor feature; guards exact fits.
const MIN_ANCHOR_VARIANCE: f64 = 1e-12;

fn anchor_variances<T: Scalar>(coords: &DMatrix<T>, pieces: usize) -> Result<DVector<T>> {
    let mut out = DVector::zeros(coords.ncols());
    for c in 0..coords.ncols() {
        let col: Vec<T> = coords.column(c).iter().copied().collect();
        let (v, _) = anchor_residual_variance(&col, pieces)?;
        out[c] = v.max(T::of(MIN_ANCHOR_VARIANCE));
    }
    Ok(out)
}

pub fn pretrain_with_report<T: Scalar>(
    data: &DataMatrix<T>,
    cfg: &DiffusionConfig,
    pieces: usize,
) -> Result<PretrainReport<T>> {
    let embedding = diffusion_embedding(data, cfg)?;
    let coords = &embedding.coordinates;
    let q = coords.ncols();
    let eps_local = match cfg.epsilon_local {
        Some(e) => T::of(e),
        None => upper_triangle_quantile(&pairwise_sq_distances(coords), 0.1).sqrt(),
    };
    if !(eps_local > T::zero()) {
        return Err(NiftyError::Degenerate("local radius is zero".into()));
    }
    let dimension = if q >= 2 {
        dimension_from_profile(&local_eigenvalue_profile(coords, eps_local), cfg.delta)?
    } else {
        DimensionEstimate {
            k: 1,
            profile: vec![],
            ratios: vec![],
        }
    };
    let k = (dimension.k + cfg.dimension_offset).min(q);
    let mut anchor_coords = coords.columns(0, k).into_owned();
    if cfg.unmix_anchors {
        anchor_coords = kurtosis_rotation(&anchor_coords);
    }
    let variances = anchor_variances(&anchor_coords, pieces)?;
    Ok(PretrainReport {
        anchor: AnchorSet::new(anchor_coords, variances, AnchorSource::DiffusionMap)?,
        dimension,
        epsilon_dm: embedding.epsilon_dm.as_f64(),
        epsilon_local: eps_local.as_f64(),
        q,
    })
}

/// Diffusion embedding, dimension estimate and anchor residual variances.
pub fn run_pretraining<T: Scalar>(
    data: &DataMatrix<T>,
    cfg: &DiffusionConfig,
    pieces: usize,
) -> Result<AnchorSet<T>> {
    Ok(pretrain_with_report(data, cfg, pieces)?.anchor)
}

/// Anchor set from externally computed coordinates; only the residual variances are estimated.
pub fn external_anchor<T: Scalar>(coordinates: DMatrix<T>, pieces: usize) -> Result<AnchorSet<T>> {
    let variances = anchor_variances(&coordinates, pieces)?;
    AnchorSet::new(coordinates, variances, AnchorSource::External)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dm(rows: &[Vec<f64>]) -> DataMatrix<f64> {
        DataMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let x = dm(&[vec![0.0], vec![2.0], vec![0.0]]);
        let k = kernel_matrix(&x, 2.0);
        assert_abs_diff_eq!(k[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(k[(0, 2)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
    }

    #[test]
    fn laplacian_two_points() {
        let a = 0.3;
        let kern = DMatrix::from_row_slice(2, 2, &[1.0, a, a, 1.0]);
        let l = normalized_laplacian(&kern, 1.0).unwrap();
        // L + I = D^{-1} W
        let p = l + DMatrix::identity(2, 2);
        assert_abs_diff_eq!(p[(0, 0)], 1.0 / (1.0 + a), epsilon = 1e-14);
        assert_abs_diff_eq!(p[(0, 1)], a / (1.0 + a), epsilon = 1e-14);
        assert_abs_diff_eq!(p[(1, 0)], a / (1.0 + a), epsilon = 1e-14);
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let x = dm(&[
            vec![0.0, 1.0],
            vec![0.5, 0.2],
            vec![2.0, 1.0],
            vec![-1.0, 0.3],
        ]);
        let l = normalized_laplacian(&kernel_matrix(&x, 1.3), 1.3).unwrap();
        let ones = DVector::from_element(4, 1.0);
        assert!((l * ones).amax() < 1e-14);
    }

    #[test]
    fn zero_row_sum_is_degenerate() {
        let kern = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            normalized_laplacian(&kern, 1.0),
            Err(NiftyError::Degenerate(_))
        ));
    }

    #[test]
    fn two_clusters_split_by_sign() {
        let x = dm(&[
            vec![0.0],
            vec![0.1],
            vec![0.2],
            vec![5.0],
            vec![5.1],
            vec![5.2],
        ]);
        let cfg = DiffusionConfig {
            epsilon_dm: Some(1.0),
            q: Some(2),
            ..Default::default()
        };
        let v = diffusion_coordinates(&x, &cfg).unwrap();
        let first = v.column(0);
        assert!(first[0] > 0.0);
        assert!((0..3).all(|i| first[i] > 0.0) && (3..6).all(|i| first[i] < 0.0));
        // brute force: eigenvectors of the non-symmetric D^{-1} W
        let kern = kernel_matrix(&x, 1.0);
        let p = normalized_laplacian(&kern, 1.0).unwrap() + DMatrix::identity(6, 6);
        let pv = &p * first;
        let lambda = pv.dot(&first) / first.dot(&first);
        assert!((pv - first * lambda).amax() < 1e-10);
    }

    #[test]
    fn duplicated_rows_share_coordinates() {
        let x = dm(&[
            vec![0.0, 0.0],
            vec![1.0, 0.5],
            vec![1.0, 0.5],
            vec![2.0, -1.0],
            vec![0.3, 2.0],
            vec![1.4, 1.1],
            vec![-0.7, 0.2],
            vec![0.9, -0.4],
        ]);
        let cfg = DiffusionConfig {
            q: Some(3),
            ..Default::default()
        };
        let v = diffusion_coordinates(&x, &cfg).unwrap();
        for c in 0..v.ncols() {
            assert_abs_diff_eq!(v[(1, c)], v[(2, c)], epsilon = 1e-10);
        }
    }

    #[test]
    fn coordinates_unit_norm_and_d_orthogonal() {
        let x = DataMatrix::new(DMatrix::from_fn(30, 3, |i, j| {
            ((i * 7 + j * 3) % 11) as f64 * 0.3 + (i as f64).sin()
        }))
        .unwrap();
        let cfg = DiffusionConfig::default();
        let v = diffusion_coordinates(&x, &cfg).unwrap();
        let eps = median_distance(x.values());
        let w = density_normalized(&kernel_matrix(&x, eps)).unwrap();
        let d = w.column_sum();
        for a in 0..v.ncols() {
            assert_abs_diff_eq!(v.column(a).norm(), 1.0, epsilon = 1e-12);
            for b in (a + 1)..v.ncols() {
                let inner: f64 = (0..30).map(|i| v[(i, a)] * v[(i, b)] * d[i]).sum();
                assert!(inner.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn local_covariance_examples() {
        let same = DMatrix::from_element(3, 2, 0.7);
        assert_eq!(local_covariance(&same, 1, 1.0), DMatrix::zeros(2, 2));
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.5, 1.0]);
        let d = DVector::from_vec(vec![-0.5, 1.0]);
        assert_abs_diff_eq!(
            local_covariance(&two, 0, 2.0),
            &d * d.transpose() * 0.5,
            epsilon = 1e-15
        );
        assert_eq!(local_covariance(&two, 0, 1.0), DMatrix::zeros(2, 2));
    }

    #[test]
    fn dimension_rule_examples() {
        assert_eq!(dimension_from_profile(&[4.0, 2.0, 0.1], 0.5).unwrap().k, 1);
        assert_eq!(dimension_from_profile(&[4.0, 4.0, 4.0], 0.5).unwrap().k, 2);
        assert_eq!(dimension_from_profile(&[1.0, 0.01], 0.5).unwrap().k, 1);
        assert!(matches!(
            dimension_from_profile(&[0.0, 0.0], 0.5),
            Err(NiftyError::Degenerate(_))
        ));
    }

    #[test]
    fn anchor_variance_sorted_ranks_and_linear_column() {
        let col: Vec<f64> = (0..12).map(|i| 3.0 + 2.0 * i as f64).collect();
        let (v, u) = anchor_residual_variance(&col, 2).unwrap();
        assert!(v.abs() < 1e-20);
        for i in 0..12 {
            assert_abs_diff_eq!(u[i], (i + 1) as f64 / 12.0, epsilon = 1e-15);
        }
        assert!(matches!(
            anchor_residual_variance(&col[..4], 2),
            Err(NiftyError::InsufficientData(_))
        ));
    }

    #[test]
    fn anchor_variance_planted_residuals() {
        // N = 10, L = 2: plant a residual orthogonal to the design with RSS 0.6
        let n = 10;
        let pieces = 2;
        let u: Vec<f64> = (1..=n).map(|r| r as f64 / n as f64).collect();
        let design = DMatrix::from_fn(n, 3, |i, c| {
            let mut row = [0.0; 3];
            basis_row(u[i], pieces, &mut row);
            row[c]
        });
        let raw = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64 - 5.0) * 0.1);
        let proj = &design
            * (design.transpose() * &design).try_inverse().unwrap()
            * design.transpose()
            * &raw;
        let mut e = raw - proj;
        e *= (0.6 / e.norm_squared()).sqrt();
        // keep the column monotone so its ranks equal u
        let col: Vec<f64> = (0..n).map(|i| 10.0 * u[i] + e[i]).collect();
        assert!(col.windows(2).all(|w| w[0] < w[1]));
        let (v, _) = anchor_residual_variance(&col, pieces).unwrap();
        assert_abs_diff_eq!(v, 0.1, epsilon = 1e-12);
    }

    fn abs_corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let c: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        (c / (va * vb).sqrt()).abs()
    }

    #[test]
    fn kurtosis_rotation_unmixes_independent_columns() {
        // a grid of (s, t) in the unit square, rotated by 30 degrees
        let side = 40;
        let n = side * side;
        let s: Vec<f64> = (0..n)
            .map(|i| (i % side) as f64 / side as f64 - 0.5)
            .collect();
        let t: Vec<f64> = (0..n)
            .map(|i| (i / side) as f64 / side as f64 - 0.5)
            .collect();
        let (sin, cos) = 30f64.to_radians().sin_cos();
        let mixed = DMatrix::from_fn(n, 2, |i, c| {
            if c == 0 {
                cos * s[i] - sin * t[i]
            } else {
                sin * s[i] + cos * t[i]
            }
        });
        let out = kurtosis_rotation(&mixed);
        let cols: Vec<Vec<f64>> = (0..2)
            .map(|c| out.column(c).iter().copied().collect())
            .collect();
        for col in &cols {
            let best = abs_corr(col, &s).max(abs_corr(col, &t));
            assert!(best > 0.999, "|corr| {best}");
        }
        // out = mixed R with R orthogonal
        let gram = mixed.transpose() * &mixed;
        let r = gram.try_inverse().unwrap() * mixed.transpose() * &out;
        assert!((&mixed * &r - &out).amax() < 1e-9);
        assert!((r.transpose() * &r - DMatrix::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn kurtosis_rotation_keeps_single_column() {
        let coords = DMatrix::from_fn(30, 1, |i, _| (i as f64 * 0.3).cos());
        assert_eq!(kurtosis_rotation(&coords), coords);
    }

    #[test]
    fn external_path_keeps_coordinates() {
        let coords = DMatrix::from_fn(20, 1, |i, _| (i as f64 * 0.37).sin());
        let a = external_anchor(coords.clone(), 3).unwrap();
        assert_eq!(a.source, AnchorSource::External);
        assert_eq!(a.coordinates, coords);
        assert!(a.residual_variances[0] > 0.0);
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric_unit_diagonal(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..12), eps in 0.1f64..5.0) {
            let k = kernel_matrix(&dm(&rows), eps);
            for i in 0..k.nrows() {
                prop_assert_eq!(k[(i, i)], 1.0);
                for j in 0..k.ncols() {
                    prop_assert_eq!(k[(i, j)], k[(j, i)]);
                    prop_assert!(k[(i, j)] >= 0.0 && k[(i, j)] <= 1.0);
                }
            }
        }

        #[test]
        fn minus_laplacian_negative_semidefinite(rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 3..10)) {
            let x = dm(&rows);
            let kern = kernel_matrix(&x, 1.5);
            let w = density_normalized(&kern).unwrap();
            let d = w.column_sum();
            // D^{1/2} L D^{-1/2} is the symmetric form of L
            let l = normalized_laplacian(&kern, 1.5).unwrap();
            let n = l.nrows();
            let s = DMatrix::from_fn(n, n, |i, j| l[(i, j)] * d[i].sqrt() / d[j].sqrt());
            let s = (&s + s.transpose()) * 0.5;
            let (vals, vecs) = symmetric_eigen_desc(s);
            prop_assert!(vals[0] < 1e-8);
            // leading eigenvector of the symmetric form is D^{1/2} 1, i.e. constant for L
            let v0 = DVector::from_fn(n, |i, _| vecs[(i, 0)] / d[i].sqrt());
            let spread = v0.max() - v0.min();
            prop_assert!(spread < 1e-6 * v0.amax());
        }

        #[test]
        fn local_covariance_symmetric_psd(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..10), i in 0usize..10, eps in 0.1f64..3.0) {
            let c = DMatrix::from_fn(rows.len(), 3, |r, k| rows[r][k]);
            let i = i % rows.len();
            let cov = local_covariance(&c, i, eps);
            prop_assert!((&cov - cov.transpose()).amax() < 1e-15);
            let (vals, _) = symmetric_eigen_desc(cov);
            prop_assert!(vals.iter().all(|&v| v > -1e-12));
        }

        #[test]
        fn dimension_scale_invariant(profile in prop::collection::vec(0.01f64..10.0, 2..8), scale in 1e-3f64..1e3) {
            let mut sorted = profile.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let scaled: Vec<f64> = sorted.iter().map(|v| v * scale).collect();
            prop_assert_eq!(
                dimension_from_profile(&sorted, 0.5).unwrap().k,
                dimension_from_profile(&scaled, 0.5).unwrap().k
            );
        }

        #[test]
        fn anchor_variance_ignores_design_span(coefs in prop::collection::vec(-2.0f64..2.0, 4), seed in 0u64..1000) {
            let n = 15;
            let pieces = 3;
            let col: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 / 10.0).collect();
            let (v0, u) = anchor_residual_variance(&col, pieces).unwrap();
            // add a function of u* from the design span; keep ranks by adding a small multiple
            let mut row = vec![0.0; pieces + 1];
            let shifted: Vec<f64> = (0..n).map(|i| {
                basis_row(u[i], pieces, &mut row);
                let f: f64 = row.iter().zip(&coefs).map(|(a, b)| a * b.abs()).sum();
                col[i] + 1e-3 * f
            }).collect();
            let (v1, _) = anchor_residual_variance(&shifted, pieces).unwrap();
            prop_assert!((v0 - v1).abs() < 1e-9 * v0.max(1.0));
        }
    }
}
