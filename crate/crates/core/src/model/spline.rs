//! Piecewise-linear latent mappings on `[0, 1]` with `L` evenly spaced pieces.

use serde::{Deserialize, Serialize};

use crate::error::{NiftyError, Result};
use crate::scalar::Scalar;

/// Continuous piecewise-linear function on `[0, 1]` with knots at `l / L`.
///
/// `g(u) = intercept + sum_l slopes[l] * clamp(u - l/L, 0, 1/L)`. No sign
/// constraint is imposed on the slopes; see [`MonotoneSpline`] for the
/// constrained variant the sampler works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear<T> {
    intercept: T,
    slopes: Vec<T>,
}

impl<T: Scalar> PiecewiseLinear<T> {
    pub fn new(intercept: T, slopes: Vec<T>) -> Result<Self> {
        if slopes.is_empty() {
            return Err(NiftyError::Config(
                "a spline needs at least one piece".into(),
            ));
        }
        if !intercept.is_finite() || slopes.iter().any(|s| !s.is_finite()) {
            return Err(NiftyError::Domain(
                "spline coefficients must be finite".into(),
            ));
        }
        Ok(Self { intercept, slopes })
    }

    /// `g(u) = u` on `L` pieces.
    pub fn identity(pieces: usize) -> Self {
        Self {
            intercept: T::zero(),
            slopes: vec![T::one(); pieces.max(1)],
        }
    }

    /// Exact `L`-knot linear interpolant of `f` on `[0, 1]`.
    pub fn interpolate(pieces: usize, f: impl Fn(f64) -> f64) -> Self {
        let pieces = pieces.max(1);
        let l = pieces as f64;
        let slopes = (0..pieces)
            .map(|p| T::of((f((p + 1) as f64 / l) - f(p as f64 / l)) * l))
            .collect();
        Self {
            intercept: T::of(f(0.0)),
            slopes,
        }
    }

    /// Rebuild from `[intercept, slope_1, .., slope_L]`.
    pub fn from_coefficients(coefs: &[T]) -> Result<Self> {
        match coefs.split_first() {
            Some((&intercept, slopes)) => Self::new(intercept, slopes.to_vec()),
            None => Err(NiftyError::Config("empty coefficient vector".into())),
        }
    }

    pub fn pieces(&self) -> usize {
        self.slopes.len()
    }

    pub fn intercept(&self) -> T {
        self.intercept
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    /// `[intercept, slope_1, .., slope_L]`.
    pub fn coefficients(&self) -> Vec<T> {
        std::iter::once(self.intercept)
            .chain(self.slopes.iter().copied())
            .collect()
    }

    pub fn eval(&self, u: T) -> Result<T> {
        if !(u >= T::zero() && u <= T::one()) {
            return Err(NiftyError::Domain(format!(
                "spline argument {u} outside [0, 1]"
            )));
        }
        Ok(self.eval_unchecked(u))
    }

    /// Evaluation without the domain check; callers guarantee `u` in `[0, 1]`.
    #[inline]
    pub fn eval_unchecked(&self, u: T) -> T {
        let pieces = self.slopes.len();
        let width = T::one() / T::count(pieces);
        let mut value = self.intercept;
        for (l, &slope) in self.slopes.iter().enumerate() {
            let start = T::count(l) / T::count(pieces);
            let seg = (u - start).max(T::zero()).min(width);
            if seg == T::zero() {
                break;
            }
            value += slope * seg;
        }
        value
    }

    /// Slope of the piece containing `u` (the right derivative; the last
    /// piece at `u = 1`).
    #[inline]
    pub fn derivative(&self, u: T) -> T {
        self.slopes[piece_index(u, self.slopes.len())]
    }

    /// Value at the knot `s_l = l / L`: `intercept + (1/L) * sum_{m<=l} slope_m`.
    pub fn knot_value(&self, l: usize) -> T {
        let width = T::one() / T::count(self.pieces());
        self.slopes[..l.min(self.pieces())]
            .iter()
            .fold(self.intercept, |acc, &s| acc + s * width)
    }

    /// Multiply every coefficient (and therefore the output) by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            intercept: self.intercept * c,
            slopes: self.slopes.iter().map(|&s| s * c).collect(),
        }
    }

    /// `sum_h weights[h] * splines[h]`, itself piecewise linear on the same knots.
    pub fn linear_combination(splines: &[&Self], weights: &[T]) -> Result<Self> {
        let first = splines
            .first()
            .ok_or_else(|| NiftyError::Shape("empty spline combination".into()))?;
        if splines.len() != weights.len() || splines.iter().any(|s| s.pieces() != first.pieces()) {
            return Err(NiftyError::Shape(
                "spline combination dimensions disagree".into(),
            ));
        }
        let mut coefs = vec![T::zero(); first.pieces() + 1];
        for (s, &w) in splines.iter().zip(weights) {
            for (c, v) in coefs.iter_mut().zip(s.coefficients()) {
                *c += w * v;
            }
        }
        Self::from_coefficients(&coefs)
    }

    pub fn is_monotone(&self) -> bool {
        self.slopes.iter().all(|&s| s >= T::zero())
    }
}

/// Index of the piece that contains `u`.
#[inline]
pub fn piece_index<T: Scalar>(u: T, pieces: usize) -> usize {
    let scaled = (u * T::count(pieces)).floor().as_f64();
    if scaled <= 0.0 {
        0
    } else {
        (scaled as usize).min(pieces - 1)
    }
}

/// Design row `[1, clamp(u - 0/L, 0, 1/L), .., clamp(u - (L-1)/L, 0, 1/L)]`.
pub fn basis_row<T: Scalar>(u: T, pieces: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), pieces + 1);
    let width = T::one() / T::count(pieces);
    out[0] = T::one();
    for l in 0..pieces {
        let start = T::count(l) / T::count(pieces);
        out[l + 1] = (u - start).max(T::zero()).min(width);
    }
}

/// A non-decreasing [`PiecewiseLinear`] mapping: every slope is `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseLinear<T>", into = "PiecewiseLinear<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct MonotoneSpline<T: Scalar>(PiecewiseLinear<T>);

impl<T: Scalar> MonotoneSpline<T> {
    pub fn new(intercept: T, slopes: Vec<T>) -> Result<Self> {
        PiecewiseLinear::new(intercept, slopes)?.try_into()
    }

    pub fn identity(pieces: usize) -> Self {
        Self(PiecewiseLinear::identity(pieces))
    }

    pub fn as_piecewise(&self) -> &PiecewiseLinear<T> {
        &self.0
    }

    pub fn into_piecewise(self) -> PiecewiseLinear<T> {
        self.0
    }
}

impl<T: Scalar> std::ops::Deref for MonotoneSpline<T> {
    type Target = PiecewiseLinear<T>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl<T: Scalar> TryFrom<PiecewiseLinear<T>> for MonotoneSpline<T> {
    type Error = NiftyError;
    fn try_from(p: PiecewiseLinear<T>) -> Result<Self> {
        if p.is_monotone() {
            Ok(Self(p))
        } else {
            Err(NiftyError::Domain(
                "monotone spline slopes must be non-negative".into(),
            ))
        }
    }
}

impl<T: Scalar> From<MonotoneSpline<T>> for PiecewiseLinear<T> {
    fn from(m: MonotoneSpline<T>) -> Self {
        m.0
    }
}
