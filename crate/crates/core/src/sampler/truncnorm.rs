//! Exact draws from a normal distribution truncated to `[lower, inf)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Draw `z ~ N(0, 1)` conditioned on `z >= a`.
///
/// Naive rejection below `a = 0.45`, otherwise the exponential-proposal
/// rejection sampler with the optimal rate `(a + sqrt(a^2 + 4)) / 2`.
pub fn standard_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a < 0.45 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                return z;
            }
        }
    }
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = a + e / rate;
        let accept = (-0.5 * (z - rate) * (z - rate)).exp();
        if rng.random::<f64>() <= accept {
            return z;
        }
    }
}

/// Draw from `N(mean, sd^2)` truncated to `[lower, inf)`.
pub fn normal_above<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    let a = (lower - mean) / sd;
    (mean + sd * standard_normal_above(a, rng)).max(lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Mean of a standard normal truncated below at a: phi(a) / (1 - Phi(a)).
    fn truncated_mean(a: f64) -> f64 {
        // Simpson quadrature on [a, a + 12].
        let n = 20_000;
        let h = 12.0 / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let z = a + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let pdf = (-0.5 * z * z).exp();
            num += w * z * pdf;
            den += w * pdf;
        }
        num / den
    }

    #[test]
    fn moments_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for a in [-2.0, 0.0, 0.3, 1.0, 4.0] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| standard_normal_above(a, &mut rng)).collect();
            assert!(draws.iter().all(|&z| z >= a));
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            let want = truncated_mean(a);
            assert!((mean - want).abs() < 4.0 * se, "a={a}: {mean} vs {want}");
        }
    }

    #[test]
    fn respects_lower_bound_far_in_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert!(normal_above(-50.0, 0.1, 0.0, &mut rng) >= 0.0);
        }
    }
}
