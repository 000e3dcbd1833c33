use nalgebra::{DMatrix, DVector};

use super::state::{DataMatrix, NiftyState};
use crate::error::{NiftyError, Result};
use crate::scalar::Scalar;

/// Latent factors of row `i`: `eta_ih = g_h(u_{i, k_h})`.
pub fn factor_transform<T: Scalar>(state: &NiftyState<T>, i: usize) -> Result<DVector<T>> {
    if i >= state.n() {
        return Err(NiftyError::Shape(format!(
            "row {i} out of range for N={}",
            state.n()
        )));
    }
    let mut eta = DVector::zeros(state.h());
    for (h, g) in state.splines.iter().enumerate() {
        eta[h] = g.eval(state.latent_locations[(i, state.assignment.location_of(h))])?;
    }
    Ok(eta)
}

/// `N x H` matrix of all latent factors.
pub fn factor_matrix<T: Scalar>(state: &NiftyState<T>) -> DMatrix<T> {
    let k_of_h = state.assignment.as_slice();
    DMatrix::from_fn(state.n(), state.h(), |i, h| {
        state.splines[h].eval_unchecked(state.latent_locations[(i, k_of_h[h])])
    })
}

/// `Lambda * eta_i`.
pub fn model_mean<T: Scalar>(state: &NiftyState<T>, i: usize) -> Result<DVector<T>> {
    Ok(&state.loadings * factor_transform(state, i)?)
}

/// `N x P` matrix whose row `i` is `(Lambda eta_i)^T`.
pub fn model_means<T: Scalar>(state: &NiftyState<T>) -> DMatrix<T> {
    factor_matrix(state) * state.loadings.transpose()
}

/// Gaussian log-likelihood of the data conditional on the latent locations.
pub fn log_likelihood<T: Scalar>(state: &NiftyState<T>, data: &DataMatrix<T>) -> Result<T> {
    if data.p() != state.p() || data.n() != state.n() {
        return Err(NiftyError::Shape(format!(
            "data is {}x{}, state expects {}x{}",
            data.n(),
            data.p(),
            state.n(),
            state.p()
        )));
    }
    Ok(gaussian_log_likelihood(
        data.values(),
        &model_means(state),
        &state.residual_variances,
    ))
}

/// `sum_ij [-1/2 log(2 pi s_j) - (x_ij - m_ij)^2 / (2 s_j)]`.
pub fn gaussian_log_likelihood<T: Scalar>(
    x: &DMatrix<T>,
    means: &DMatrix<T>,
    variances: &DVector<T>,
) -> T {
    let half = T::of(0.5);
    let n = T::count(x.nrows());
    let mut total = T::zero();
    for j in 0..x.ncols() {
        let s = variances[j];
        let rss = x
            .column(j)
            .iter()
            .zip(means.column(j).iter())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        total -= half * n * (T::two_pi() * s).ln() + half * rss / s;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorAssignment, MonotoneSpline};
    use approx::assert_abs_diff_eq;

    fn state(
        loadings: DMatrix<f64>,
        splines: Vec<MonotoneSpline<f64>>,
        u: DMatrix<f64>,
        assignment: FactorAssignment,
        variances: Vec<f64>,
    ) -> NiftyState<f64> {
        let (p, h) = loadings.shape();
        NiftyState {
            loadings,
            splines,
            latent_locations: u,
            residual_variances: DVector::from_vec(variances),
            local_scales: DMatrix::from_element(p, h, 1.0),
            global_scale: 1.0,
            assignment,
        }
    }

    #[test]
    fn identity_splines_give_locations() {
        let u = DMatrix::from_row_slice(2, 2, &[0.1, 0.7, 0.4, 0.9]);
        let s = state(
            DMatrix::identity(2, 2),
            vec![MonotoneSpline::identity(3); 2],
            u.clone(),
            FactorAssignment::independent(2),
            vec![1.0; 2],
        );
        for i in 0..2 {
            let eta = factor_transform(&s, i).unwrap();
            assert_abs_diff_eq!(eta[0], u[(i, 0)], epsilon = 1e-15);
            assert_abs_diff_eq!(eta[1], u[(i, 1)], epsilon = 1e-15);
            // P = H with identity loadings
            assert_abs_diff_eq!(model_mean(&s, i).unwrap(), eta, epsilon = 1e-15);
        }
    }

    #[test]
    fn shared_location_identical_splines() {
        let s = state(
            DMatrix::from_element(1, 2, 1.0),
            vec![MonotoneSpline::new(0.3, vec![1.0, 2.0]).unwrap(); 2],
            DMatrix::from_row_slice(2, 1, &[0.35, 0.8]),
            FactorAssignment::new(vec![0, 0], 1).unwrap(),
            vec![1.0],
        );
        for i in 0..2 {
            let eta = factor_transform(&s, i).unwrap();
            assert_eq!(eta[0], eta[1]);
        }
    }

    #[test]
    fn squared_map_interpolant() {
        let square = crate::model::PiecewiseLinear::interpolate(10, |u| u * u);
        let s = state(
            DMatrix::from_element(1, 2, 1.0),
            vec![
                MonotoneSpline::identity(10),
                MonotoneSpline::try_from(square).unwrap(),
            ],
            DMatrix::from_row_slice(2, 1, &[0.5, 0.1]),
            FactorAssignment::new(vec![0, 0], 1).unwrap(),
            vec![1.0],
        );
        let eta = factor_transform(&s, 0).unwrap();
        assert_abs_diff_eq!(eta[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(eta[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn model_mean_examples() {
        let zero = state(
            DMatrix::zeros(3, 1),
            vec![MonotoneSpline::identity(2)],
            DMatrix::from_row_slice(2, 1, &[0.3, 0.6]),
            FactorAssignment::independent(1),
            vec![1.0; 3],
        );
        assert_eq!(model_mean(&zero, 0).unwrap(), DVector::zeros(3));

        // eta = 3 from a constant spline with intercept 3
        let s = state(
            DMatrix::from_row_slice(2, 1, &[2.0, -1.0]),
            vec![MonotoneSpline::new(3.0, vec![0.0]).unwrap()],
            DMatrix::from_row_slice(2, 1, &[0.3, 0.6]),
            FactorAssignment::independent(1),
            vec![1.0; 2],
        );
        assert_eq!(
            model_mean(&s, 1).unwrap(),
            DVector::from_vec(vec![6.0, -3.0])
        );
        assert!(model_mean(&s, 2).is_err());
    }

    fn constant_state(mean: f64, var: f64, n: usize, p: usize) -> NiftyState<f64> {
        state(
            DMatrix::from_element(p, 1, 1.0),
            vec![MonotoneSpline::new(mean, vec![0.0]).unwrap()],
            DMatrix::from_element(n, 1, 0.5),
            FactorAssignment::independent(1),
            vec![var; p],
        )
    }

    #[test]
    fn log_likelihood_examples() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let x = DataMatrix::new(DMatrix::from_element(2, 1, 0.0)).unwrap();
        let s = constant_state(0.0, 1.0, 2, 1);
        assert_abs_diff_eq!(log_likelihood(&s, &x).unwrap(), -ln2pi, epsilon = 1e-14);

        // zero residuals with doubled variances: -(NP/2) log(4 pi)
        let x = DataMatrix::new(DMatrix::from_element(3, 2, 1.5)).unwrap();
        let s = constant_state(1.5, 2.0, 3, 2);
        let want = -(6.0 / 2.0) * (4.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(log_likelihood(&s, &x).unwrap(), want, epsilon = 1e-12);

        // scalar Gaussian: x = 1, mean 0, var 1, per row
        let x = DataMatrix::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        let s = constant_state(0.0, 1.0, 2, 1);
        let per_row = log_likelihood(&s, &x).unwrap() / 2.0;
        assert_abs_diff_eq!(per_row, -0.5 * ln2pi - 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(per_row, -1.418_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn log_likelihood_shape_error() {
        let x = DataMatrix::new(DMatrix::from_element(2, 3, 0.0)).unwrap();
        let s = constant_state(0.0, 1.0, 2, 1);
        assert!(matches!(log_likelihood(&s, &x), Err(NiftyError::Shape(_))));
    }

    #[test]
    fn rotation_within_partition_preserves_likelihood() {
        // H = 2 factors on K = 1 location; rotate (Lambda, eta) jointly.
        let square = crate::model::PiecewiseLinear::interpolate(6, |u| u * u - 0.3);
        let s = state(
            DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.7, 2.0, 0.2, -1.1]),
            vec![
                MonotoneSpline::identity(6),
                MonotoneSpline::try_from(square).unwrap(),
            ],
            DMatrix::from_row_slice(4, 1, &[0.1, 0.45, 0.8, 0.99]),
            FactorAssignment::new(vec![0, 0], 1).unwrap(),
            vec![0.3, 0.5, 0.8],
        );
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.2, -0.1, 0.3, 0.5, 0.4, -0.2, 1.1, 0.9, -0.4, 0.7, 1.6, 0.1,
            ],
        );
        let base = gaussian_log_likelihood(
            &x,
            &(factor_matrix(&s) * s.loadings.transpose()),
            &s.residual_variances,
        );
        for angle in [0.3f64, 1.2, 2.9, -0.7] {
            let (c, sn) = (angle.cos(), angle.sin());
            let r = DMatrix::from_row_slice(2, 2, &[c, -sn, sn, c]);
            let lam = &s.loadings * &r;
            let eta = factor_matrix(&s) * &r;
            let rotated =
                gaussian_log_likelihood(&x, &(eta * lam.transpose()), &s.residual_variances);
            assert!(((rotated - base) / base).abs() < 1e-10);
        }
    }

    #[test]
    fn column_rescaling_preserves_likelihood() {
        let mut s = state(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.7, 2.0]),
            vec![
                MonotoneSpline::new(0.2, vec![1.0, 3.0]).unwrap(),
                MonotoneSpline::new(-0.4, vec![0.5, 0.0]).unwrap(),
            ],
            DMatrix::from_row_slice(3, 2, &[0.1, 0.9, 0.5, 0.2, 0.7, 0.6]),
            FactorAssignment::independent(2),
            vec![0.4, 0.9],
        );
        let x = DataMatrix::new(DMatrix::from_row_slice(
            3,
            2,
            &[0.3, 0.1, -0.2, 0.8, 1.2, 0.4],
        ))
        .unwrap();
        let base = log_likelihood(&s, &x).unwrap();
        let c = 3.7;
        s.loadings.column_mut(1).scale_mut(c);
        s.splines[1] = MonotoneSpline::try_from(s.splines[1].scaled(1.0 / c)).unwrap();
        let scaled = log_likelihood(&s, &x).unwrap();
        assert!(((scaled - base) / base).abs() < 1e-12);
    }
}
