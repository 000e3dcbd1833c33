//! Small dense linear-algebra and order-statistic helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{NiftyError, Result};
use crate::scalar::{cmp_finite, Scalar};

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<T: Scalar>(m: DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m)
        .ok_or_else(|| NiftyError::Numerical(format!("{what} is not positive definite")))
}

/// Gaussian with precision `q` and linear term `b`: returns the mean `q^{-1} b`
/// and a draw `mean + L^{-T} z` where `q = L L^T`.
pub fn gaussian_from_precision<T: Scalar>(
    q: DMatrix<T>,
    b: &DVector<T>,
    z: &DVector<T>,
    what: &str,
) -> Result<(DVector<T>, DVector<T>)> {
    let chol = cholesky(q, what)?;
    let mean = chol.solve(b);
    let l = chol.l();
    let offset = l
        .transpose()
        .solve_upper_triangular(z)
        .ok_or_else(|| NiftyError::Numerical(format!("{what}: singular Cholesky factor")))?;
    Ok((mean.clone(), mean + offset))
}

/// Ordinary least squares via QR. Returns coefficients and the residual sum of squares.
pub fn least_squares<T: Scalar>(design: &DMatrix<T>, y: &DVector<T>) -> Result<(DVector<T>, T)> {
    let (n, m) = design.shape();
    if n < m {
        return Err(NiftyError::Rank(format!("{n} rows for {m} unknowns")));
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = (0..m)
        .map(|i| r[(i, i)].abs())
        .fold(T::zero(), |a, b| a.max(b));
    let tol = scale * T::of(1e-10);
    if scale == T::zero() || (0..m).any(|i| r[(i, i)].abs() <= tol) {
        return Err(NiftyError::Rank("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| NiftyError::Rank("singular triangular factor".into()))?;
    let resid = y - design * &coef;
    Ok((coef, resid.norm_squared()))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn symmetric_eigen_desc<T: Scalar>(m: DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| cmp_finite(&eig.eigenvalues[b], &eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// 1-based ranks with ties broken by original index.
pub fn ranks<T: Scalar>(values: &[T]) -> Vec<usize> {
    let order = argsort(values);
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Stable ascending argsort.
pub fn argsort<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp_finite(&values[a], &values[b]));
    order
}

pub fn sorted<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(cmp_finite);
    v
}

/// Linear-interpolation quantile of already sorted data (the usual "type 7").
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_distances<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = T::zero();
            for c in 0..x.ncols() {
                let diff = x[(i, c)] - x[(j, c)];
                s += diff * diff;
            }
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Median of the strictly upper-triangular entries of a symmetric matrix.
pub fn upper_triangle_quantile<T: Scalar>(m: &DMatrix<T>, p: f64) -> T {
    let n = m.nrows();
    let mut vals = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(m[(i, j)]);
        }
    }
    if vals.is_empty() {
        return T::zero();
    }
    vals.sort_by(cmp_finite);
    quantile_sorted(&vals, p)
}

/// Sample covariance (divisor `n - 1`) of the columns of `x`.
pub fn sample_covariance<T: Scalar>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = x.nrows();
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let denom = T::count(n.saturating_sub(1).max(1));
    (centered.transpose() * centered) / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_break_ties_by_index() {
        assert_eq!(ranks(&[0.3, 0.1, 0.3, 0.2]), vec![3, 1, 4, 2]);
    }

    #[test]
    fn least_squares_exact_line() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(5, |i, _| 2.0 + 0.5 * i as f64);
        let (coef, rss) = least_squares(&x, &y).unwrap();
        assert_abs_diff_eq!(coef[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coef[1], 0.5, epsilon = 1e-12);
        assert!(rss < 1e-20);
    }

    #[test]
    fn least_squares_rank_error() {
        let x = DMatrix::from_element(4, 2, 1.0);
        let y = DVector::from_element(4, 1.0);
        assert!(matches!(least_squares(&x, &y), Err(NiftyError::Rank(_))));
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = symmetric_eigen_desc(m);
        assert_eq!(vals[0], 3.0);
        assert_abs_diff_eq!(vecs[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.5), 2.5, epsilon = 1e-15);
    }
}
