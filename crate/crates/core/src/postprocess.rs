//! Identifiability post-processing: per-partition orthogonalization, label and
//! sign alignment across samples, and unit-norm loading columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NiftyError, Result};
use crate::linalg::{quantile_sorted, sorted};
use crate::model::{FactorAssignment, NiftyState, PiecewiseLinear};
use crate::sampler::PosteriorChain;
use crate::scalar::Scalar;

/// A posterior sample after post-processing. Rotated mappings need not be
/// monotone, so they are stored as plain piecewise-linear functions.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedSample<T: Scalar> {
    pub loadings: DMatrix<T>,
    pub splines: Vec<PiecewiseLinear<T>>,
    pub latent_locations: DMatrix<T>,
    pub residual_variances: DVector<T>,
    pub assignment: FactorAssignment,
}

impl<T: Scalar> IdentifiedSample<T> {
    pub fn from_state(state: &NiftyState<T>) -> Self {
        Self {
            loadings: state.loadings.clone(),
            splines: state
                .splines
                .iter()
                .map(|g| g.as_piecewise().clone())
                .collect(),
            latent_locations: state.latent_locations.clone(),
            residual_variances: state.residual_variances.clone(),
            assignment: state.assignment.clone(),
        }
    }

    pub fn h(&self) -> usize {
        self.loadings.ncols()
    }

    /// `N x H` latent factors.
    pub fn factor_matrix(&self) -> DMatrix<T> {
        let k_of_h = self.assignment.as_slice();
        DMatrix::from_fn(self.latent_locations.nrows(), self.h(), |i, h| {
            self.splines[h].eval_unchecked(self.latent_locations[(i, k_of_h[h])])
        })
    }

    /// `Lambda g(u)` where every latent location is set to `u`.
    pub fn mean_at(&self, u: T) -> DVector<T> {
        let eta =
            DVector::from_iterator(self.h(), self.splines.iter().map(|g| g.eval_unchecked(u)));
        &self.loadings * eta
    }

    /// `Lambda g(u_k)` for one value per latent location.
    pub fn mean_at_locations(&self, u: &[T]) -> DVector<T> {
        let eta = DVector::from_iterator(
            self.h(),
            self.splines
                .iter()
                .enumerate()
                .map(|(h, g)| g.eval_unchecked(u[self.assignment.location_of(h)])),
        );
        &self.loadings * eta
    }
}

/// How each partition's loading block is made orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthogonalizationMethod {
    /// Rotate onto the right singular vectors: columns become orthogonal.
    #[default]
    PrincipalAxes,
    /// Kaiser varimax rotation (columns are generally not orthogonal).
    Varimax,
}

/// Square matrix stored row-major for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl BlockMatrix {
    fn from_matrix<T: Scalar>(m: &DMatrix<T>) -> Self {
        let size = m.nrows();
        let mut values = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                values.push(m[(r, c)].as_f64());
            }
        }
        Self { size, values }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.size, self.size, &self.values)
    }
}

/// Everything applied to the chain by [`match_align`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub method: OrthogonalizationMethod,
    pub pivot: usize,
    /// `rotations[m][k]`: rotation of partition `k` in sample `m`.
    pub rotations: Vec<Vec<BlockMatrix>>,
    /// `permutations[m][h]`: source column placed at position `h`.
    pub permutations: Vec<Vec<usize>>,
    pub signs: Vec<Vec<f64>>,
    /// Greedy matches decided by the column-index tie-break.
    pub ties: usize,
    /// Largest `|Lambda g(u) before - after|` over samples and the u-grid.
    pub max_mean_change: f64,
}

/// Chain of identified samples.
#[derive(Debug, Clone)]
pub struct AlignedChain<T: Scalar> {
    pub samples: Vec<IdentifiedSample<T>>,
    pub log_posterior_trace: Vec<f64>,
    pub report: AlignmentReport,
    pub anchor_count: usize,
}

const ORTHOGONAL_TOL: f64 = 1e-10;

fn is_orthogonal_block<T: Scalar>(block: &DMatrix<T>) -> bool {
    let gram = block.transpose() * block;
    let n = gram.nrows();
    (0..n).all(|a| {
        (0..n).all(|b| {
            a == b
                || gram[(a, b)].abs().as_f64()
                    <= ORTHOGONAL_TOL * (gram[(a, a)] * gram[(b, b)]).sqrt().as_f64()
        })
    })
}

fn check_rank<T: Scalar>(block: &DMatrix<T>) -> Result<()> {
    let (p, h) = block.shape();
    if h > p {
        return Err(NiftyError::Rank(format!(
            "{p}x{h} block cannot have full column rank"
        )));
    }
    let sv = block.clone().singular_values();
    let max = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    let min = sv.iter().fold(max, |a, &b| a.min(b));
    if !(max > T::zero()) || min <= max * T::of(1e-12) {
        return Err(NiftyError::Rank("loading block is rank deficient".into()));
    }
    Ok(())
}

/// Principal-axes orthogonalization `(Lambda R, R)`: `R` holds the right
/// singular vectors ordered by decreasing singular value, each oriented so the
/// largest entry of the rotated column is positive. Blocks whose columns are
/// already orthogonal are returned with `R = I`.
pub fn orthogonalize_partition<T: Scalar>(block: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_rank(block)?;
    let h = block.ncols();
    if is_orthogonal_block(block) {
        return Ok((block.clone(), DMatrix::identity(h, h)));
    }
    let svd = block.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| NiftyError::Numerical("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| {
        crate::scalar::cmp_finite(&svd.singular_values[b], &svd.singular_values[a])
    });
    let mut r = DMatrix::from_fn(h, h, |row, c| v_t[(order[c], row)]);
    let mut rotated = block * &r;
    for c in 0..h {
        let col = rotated.column(c);
        let idx = col.iamax();
        if col[idx] < T::zero() {
            r.column_mut(c).neg_mut();
            rotated.column_mut(c).neg_mut();
        }
    }
    Ok((rotated, r))
}

/// Kaiser varimax rotation `(Lambda R, R)` without row normalization.
pub fn varimax<T: Scalar>(
    block: &DMatrix<T>,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_rank(block)?;
    let (p, h) = block.shape();
    let mut r = DMatrix::<T>::identity(h, h);
    if h == 1 {
        return Ok((block.clone(), r));
    }
    let mut last = 0.0;
    let pf = T::count(p);
    for _ in 0..max_iter {
        let z = block * &r;
        let col_ss = DVector::from_fn(h, |c, _| z.column(c).norm_squared() / pf);
        let target = DMatrix::from_fn(p, h, |i, c| {
            let v = z[(i, c)];
            v * v * v - v * col_ss[c]
        });
        let svd = (block.transpose() * target).svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(NiftyError::Numerical("varimax SVD failed".into())),
        };
        r = u * v_t;
        let crit = svd.singular_values.sum().as_f64();
        if crit < last * (1.0 + tol) {
            break;
        }
        last = crit;
    }
    Ok((block * &r, r))
}

/// Scale every loading column to unit norm and fold the norm into its mapping.
pub fn normalize_columns<T: Scalar>(sample: &IdentifiedSample<T>) -> Result<IdentifiedSample<T>> {
    let mut out = sample.clone();
    for h in 0..sample.h() {
        let norm = sample.loadings.column(h).norm();
        if !(norm > T::zero()) {
            return Err(NiftyError::Degenerate(format!(
                "loading column {h} is zero"
            )));
        }
        if norm == T::one() {
            continue;
        }
        out.loadings.column_mut(h).unscale_mut(norm);
        out.splines[h] = sample.splines[h].scaled(norm);
    }
    Ok(out)
}

fn rotate_partition<T: Scalar>(
    sample: &mut IdentifiedSample<T>,
    members: &[usize],
    method: OrthogonalizationMethod,
) -> Result<DMatrix<T>> {
    let block = DMatrix::from_fn(sample.loadings.nrows(), members.len(), |i, c| {
        sample.loadings[(i, members[c])]
    });
    let (rotated, r) = match method {
        OrthogonalizationMethod::PrincipalAxes => orthogonalize_partition(&block)?,
        OrthogonalizationMethod::Varimax => varimax(&block, 1e-12, 1000)?,
    };
    if r == DMatrix::identity(members.len(), members.len()) {
        return Ok(r);
    }
    let old: Vec<&PiecewiseLinear<T>> = members.iter().map(|&h| &sample.splines[h]).collect();
    let mut new_splines = Vec::with_capacity(members.len());
    for a in 0..members.len() {
        // (R^T g)_a = sum_b R_ba g_b
        let weights: Vec<T> = (0..members.len()).map(|b| r[(b, a)]).collect();
        new_splines.push(PiecewiseLinear::linear_combination(&old, &weights)?);
    }
    for (c, &h) in members.iter().enumerate() {
        sample.loadings.set_column(h, &rotated.column(c));
        sample.splines[h] = new_splines[c].clone();
    }
    Ok(r)
}

/// Greedy matching of `sample` columns to `pivot` columns within one
/// partition by largest absolute cosine. Returns, for each pivot position, the
/// chosen sample column, its sign and whether the choice was a tie.
fn greedy_match<T: Scalar>(
    pivot: &DMatrix<T>,
    sample: &DMatrix<T>,
    members: &[usize],
) -> (Vec<usize>, Vec<T>, usize) {
    let m = members.len();
    let mut scores = Vec::with_capacity(m * m);
    for (a, &ha) in members.iter().enumerate() {
        let pa = pivot.column(ha);
        for (b, &hb) in members.iter().enumerate() {
            let sb = sample.column(hb);
            let denom = pa.norm() * sb.norm();
            let cos = if denom > T::zero() {
                pa.dot(&sb) / denom
            } else {
                T::zero()
            };
            scores.push((a, b, cos));
        }
    }
    let mut chosen = vec![usize::MAX; m];
    let mut signs = vec![T::one(); m];
    let mut used = vec![false; m];
    let mut ties = 0;
    for _ in 0..m {
        let mut best: Option<(usize, usize, T)> = None;
        let mut tie = false;
        for &(a, b, cos) in &scores {
            if chosen[a] != usize::MAX || used[b] {
                continue;
            }
            match best {
                None => best = Some((a, b, cos)),
                Some((_, _, c)) => {
                    let diff = cos.abs().as_f64() - c.abs().as_f64();
                    if diff > 1e-12 {
                        best = Some((a, b, cos));
                        tie = false;
                    } else if diff.abs() <= 1e-12 {
                        tie = true;
                    }
                }
            }
        }
        let (a, b, cos) = best.expect("an unmatched pair remains");
        if tie {
            ties += 1;
            log::debug!(
                "column match tie at pivot column {}, broken by index",
                members[a]
            );
        }
        chosen[a] = b;
        used[b] = true;
        signs[a] = if cos < T::zero() { -T::one() } else { T::one() };
    }
    (chosen.iter().map(|&b| members[b]).collect(), signs, ties)
}

const GRID_POINTS: usize = 101;

fn grid<T: Scalar>() -> Vec<T> {
    (0..GRID_POINTS)
        .map(|i| T::count(i) / T::count(GRID_POINTS - 1))
        .collect()
}

/// Align already-extracted samples against the one with the highest log posterior.
pub fn align_samples<T: Scalar>(
    samples: &[IdentifiedSample<T>],
    log_posterior: &[f64],
    method: OrthogonalizationMethod,
) -> Result<(Vec<IdentifiedSample<T>>, AlignmentReport)> {
    if samples.is_empty() {
        return Err(NiftyError::EmptyChain);
    }
    if log_posterior.len() != samples.len() {
        return Err(NiftyError::Shape(format!(
            "{} samples but {} log posterior values",
            samples.len(),
            log_posterior.len()
        )));
    }
    let first = &samples[0];
    if samples
        .iter()
        .any(|s| s.loadings.shape() != first.loadings.shape() || s.assignment != first.assignment)
    {
        return Err(NiftyError::Shape(
            "samples disagree on dimensions or assignment".into(),
        ));
    }
    let pivot =
        log_posterior.iter().enumerate().fold(
            0,
            |best, (m, &v)| if v > log_posterior[best] { m } else { best },
        );
    let partitions = first.assignment.partitions();

    let mut rotated = Vec::with_capacity(samples.len());
    let mut rotations = Vec::with_capacity(samples.len());
    for s in samples {
        let mut out = s.clone();
        let mut rs = Vec::with_capacity(partitions.len());
        for members in &partitions {
            rs.push(BlockMatrix::from_matrix(&rotate_partition(
                &mut out, members, method,
            )?));
        }
        rotated.push(out);
        rotations.push(rs);
    }

    let pivot_loadings = rotated[pivot].loadings.clone();
    let h = first.h();
    let mut aligned = Vec::with_capacity(samples.len());
    let mut permutations = Vec::with_capacity(samples.len());
    let mut signs_all = Vec::with_capacity(samples.len());
    let mut ties = 0;
    for s in rotated {
        let mut perm: Vec<usize> = (0..h).collect();
        let mut signs = vec![T::one(); h];
        for members in &partitions {
            let (src, sg, t) = greedy_match(&pivot_loadings, &s.loadings, members);
            ties += t;
            for (c, &dst) in members.iter().enumerate() {
                perm[dst] = src[c];
                signs[dst] = sg[c];
            }
        }
        let mut out = s.clone();
        for dst in 0..h {
            let src = perm[dst];
            out.loadings
                .set_column(dst, &(s.loadings.column(src) * signs[dst]));
            out.splines[dst] = s.splines[src].scaled(signs[dst]);
        }
        aligned.push(normalize_columns(&out)?);
        permutations.push(perm);
        signs_all.push(signs.iter().map(|v| v.as_f64()).collect());
    }

    let grid = grid::<T>();
    let mut max_change = 0.0f64;
    for (before, after) in samples.iter().zip(&aligned) {
        for &u in &grid {
            let d = (before.mean_at(u) - after.mean_at(u)).amax().as_f64();
            max_change = max_change.max(d);
        }
    }

    Ok((
        aligned,
        AlignmentReport {
            method,
            pivot,
            rotations,
            permutations,
            signs: signs_all,
            ties,
            max_mean_change: max_change,
        },
    ))
}

/// Orthogonalize, match, sign-align and normalize every retained sample.
pub fn match_align<T: Scalar>(chain: &PosteriorChain<T>) -> Result<AlignedChain<T>> {
    match_align_with(chain, OrthogonalizationMethod::default())
}

pub fn match_align_with<T: Scalar>(
    chain: &PosteriorChain<T>,
    method: OrthogonalizationMethod,
) -> Result<AlignedChain<T>> {
    let samples: Vec<IdentifiedSample<T>> = chain
        .samples
        .iter()
        .map(IdentifiedSample::from_state)
        .collect();
    let (samples, report) =
        align_samples(&samples, &chain.diagnostics.log_posterior_trace, method)?;
    Ok(AlignedChain {
        samples,
        log_posterior_trace: chain.diagnostics.log_posterior_trace.clone(),
        report,
        anchor_count: chain.anchor_count,
    })
}

/// Run the alignment again on an aligned chain.
pub fn realign<T: Scalar>(chain: &AlignedChain<T>) -> Result<AlignedChain<T>> {
    let (samples, report) = align_samples(
        &chain.samples,
        &chain.log_posterior_trace,
        chain.report.method,
    )?;
    Ok(AlignedChain {
        samples,
        log_posterior_trace: chain.log_posterior_trace.clone(),
        report,
        anchor_count: chain.anchor_count,
    })
}

/// Elementwise mean and 5% / 95% quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval<T: Scalar> {
    pub mean: DMatrix<T>,
    pub lower: DMatrix<T>,
    pub upper: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary<T: Scalar> {
    pub loadings: Interval<T>,
    /// `P x 1`.
    pub residual_variances: Interval<T>,
    /// `H x 101`: each mapping evaluated on [`PosteriorSummary::grid`].
    pub splines: Interval<T>,
    pub grid: Vec<T>,
}

fn interval<T: Scalar>(draws: &[DMatrix<T>]) -> Interval<T> {
    let (r, c) = draws[0].shape();
    let m = T::count(draws.len());
    let mut mean = DMatrix::zeros(r, c);
    let mut lower = DMatrix::zeros(r, c);
    let mut upper = DMatrix::zeros(r, c);
    let mut buf = Vec::with_capacity(draws.len());
    for i in 0..r {
        for j in 0..c {
            buf.clear();
            buf.extend(draws.iter().map(|d| d[(i, j)]));
            mean[(i, j)] = buf.iter().fold(T::zero(), |a, &b| a + b) / m;
            let s = sorted(&buf);
            lower[(i, j)] = quantile_sorted(&s, 0.05);
            upper[(i, j)] = quantile_sorted(&s, 0.95);
        }
    }
    Interval { mean, lower, upper }
}

/// Posterior means and central 90% intervals of the loadings, residual
/// variances and mappings (on a 101-point grid).
pub fn summarize<T: Scalar>(chain: &AlignedChain<T>) -> Result<PosteriorSummary<T>> {
    if chain.samples.is_empty() {
        return Err(NiftyError::EmptyChain);
    }
    let grid = grid::<T>();
    let loadings: Vec<DMatrix<T>> = chain.samples.iter().map(|s| s.loadings.clone()).collect();
    let variances: Vec<DMatrix<T>> = chain
        .samples
        .iter()
        .map(|s| {
            DMatrix::from_column_slice(
                s.residual_variances.len(),
                1,
                s.residual_variances.as_slice(),
            )
        })
        .collect();
    let curves: Vec<DMatrix<T>> = chain
        .samples
        .iter()
        .map(|s| {
            DMatrix::from_fn(s.h(), grid.len(), |h, g| {
                s.splines[h].eval_unchecked(grid[g])
            })
        })
        .collect();
    Ok(PosteriorSummary {
        loadings: interval(&loadings),
        residual_variances: interval(&variances),
        splines: interval(&curves),
        grid,
    })
}
