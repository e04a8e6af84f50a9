//! Significance machinery: sign-flip permutation test, Benjamini–Hochberg,
//! Spearman correlation, Gaussian KDE and a one-sample KS test.

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no observations")]
    Empty,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("number of permutations must be positive")]
    NoPermutations,
    #[error("p-value {0} outside [0, 1]")]
    BadPValue(f64),
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("ranks are constant; correlation undefined")]
    DegenerateRanks,
    #[error("zero variance")]
    ZeroVariance,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (ddof 1).
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

// ---------------------------------------------------------------------------
// Sign-flip permutation test

/// Outcome of a one-sided sign-flip permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_mean: f64,
    pub n_permutations: usize,
    pub n_at_least_as_extreme: usize,
    /// `(r + 1) / (B + 1)`.
    pub p_value: f64,
    /// Twice the one-sided value, clamped to 1; the asymptotic two-sided reading.
    pub p_two_sided: f64,
    pub seed: u64,
}

/// Test whether the mean of `deltas` is significantly positive by flipping
/// each sign independently with probability ½. Ties count as extreme.
pub fn permutation_test(deltas: &[f64], n_perm: usize, seed: u64) -> Result<PermutationResult> {
    permutation_test_with(deltas, n_perm, seed, Execution::default())
}

pub fn permutation_test_with(
    deltas: &[f64],
    n_perm: usize,
    seed: u64,
    exec: Execution,
) -> Result<PermutationResult> {
    if deltas.is_empty() {
        return Err(StatsError::Empty);
    }
    if n_perm == 0 {
        return Err(StatsError::NoPermutations);
    }
    let observed: f64 = deltas.iter().sum();
    let extreme = exec.count(n_perm, |i| {
        let mut rng = rng::rng_for(seed, rng::stream::PERMUTATION, i as u64);
        let mut sum = 0.0;
        for chunk in deltas.chunks(64) {
            let bits = rng.next_u64();
            for (j, d) in chunk.iter().enumerate() {
                sum += if bits >> j & 1 == 1 { -d } else { *d };
            }
        }
        sum >= observed
    });
    let p_value = ((extreme + 1) as f64 / (n_perm + 1) as f64).min(1.0);
    Ok(PermutationResult {
        observed_mean: observed / deltas.len() as f64,
        n_permutations: n_perm,
        n_at_least_as_extreme: extreme,
        p_value,
        p_two_sided: (2.0 * p_value).min(1.0),
        seed,
    })
}

// ---------------------------------------------------------------------------
// Benjamini–Hochberg

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    /// In input order.
    pub rejected: Vec<bool>,
    /// Step-up adjusted p-values in input order, clamped to 1.
    pub adjusted: Vec<f64>,
}

/// Benjamini–Hochberg step-up procedure at false-discovery rate `alpha`.
pub fn bh_correct(p_values: &[f64], alpha: f64) -> Result<BhResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    if let Some(&p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::BadPValue(p));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let k_star = (1..=m).rev().find(|&k| p_values[order[k - 1]] <= k as f64 * alpha / m as f64);
    let mut rejected = vec![false; m];
    if let Some(k) = k_star {
        for &i in &order[..k] {
            rejected[i] = true;
        }
    }
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(m as f64 * p_values[i] / rank as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(BhResult { rejected, adjusted })
}

// ---------------------------------------------------------------------------
// Spearman

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided permutation p-value, `(r + 1) / (B + 1)`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Ranks starting at 1, ties receive their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman's rank correlation with a permutation p-value over `n_perm`
/// shuffles of the y-ranks.
pub fn spearman_rho(pairs: &[(f64, f64)], n_perm: usize, seed: u64) -> Result<SpearmanResult> {
    if pairs.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: pairs.len() });
    }
    if n_perm == 0 {
        return Err(StatsError::NoPermutations);
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (rx, ry) = (average_ranks(&xs), average_ranks(&ys));
    let constant = |r: &[f64]| r.iter().all(|&v| v == r[0]);
    if constant(&rx) || constant(&ry) {
        return Err(StatsError::DegenerateRanks);
    }
    let rho = pearson(&rx, &ry);
    let extreme = Execution::default().count(n_perm, |i| {
        let mut shuffled = ry.clone();
        shuffled.shuffle(&mut rng::rng_for(seed, rng::stream::SPEARMAN, i as u64));
        pearson(&rx, &shuffled).abs() >= rho.abs() - 1e-12
    });
    Ok(SpearmanResult {
        rho,
        p_value: (extreme + 1) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Kernel density estimate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule, `1.06 σ̂ n^(-1/5)`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl KdeCurve {
    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) / 2.0)
            .sum()
    }

    /// Grid point with maximal density.
    pub fn mode(&self) -> f64 {
        let i = (0..self.density.len()).fold(0, |b, i| if self.density[i] > self.density[b] { i } else { b });
        self.xs[i]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density\n");
        for (x, d) in self.xs.iter().zip(&self.density) {
            s.push_str(&format!("{x},{d}\n"));
        }
        s
    }
}

/// Gaussian kernel density estimate sampled on a regular grid spanning the
/// data ± 5 bandwidths, fine enough that the trapezoid integral is ≈ 1.
pub fn kde(values: &[f64], bandwidth: Bandwidth) -> Result<KdeCurve> {
    if values.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: values.len() });
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(StatsError::BadBandwidth(h)),
        Bandwidth::Auto => {
            let sd = sample_std(values);
            if sd > 0.0 {
                1.06 * sd * (values.len() as f64).powf(-0.2)
            } else {
                1e-3 * mean(values).abs().max(1.0)
            }
        }
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 5.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 5.0 * h;
    let points = (((hi - lo) / (h / 8.0)).ceil() as usize + 1).clamp(512, 200_000);
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let density = xs
        .iter()
        .map(|&x| {
            norm * values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve { xs, density, bandwidth: h })
}

// ---------------------------------------------------------------------------
// Kolmogorov–Smirnov against U(0, 1)

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `values` against the uniform distribution on [0, 1],
/// with the asymptotic Kolmogorov p-value (Stephens' small-sample correction).
pub fn ks_uniform(values: &[f64]) -> Result<KsResult> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda) })
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn all_zero_deltas_give_p_one() {
        let r = permutation_test(&[0.0; 8], 500, 1).unwrap();
        assert_eq!(r.n_at_least_as_extreme, 500);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn single_delta_is_a_coin_flip() {
        let r = permutation_test(&[1.0], 20_000, 3).unwrap();
        assert!((r.p_value - 0.5).abs() < 0.02, "{}", r.p_value);
    }

    #[test]
    fn ten_positive_deltas_match_enumeration() {
        // only the all-plus pattern reaches the observed mean: exact p = 1/1024
        let r = permutation_test(&[1.0; 10], 100_000, 9).unwrap();
        assert!((r.p_value - 1.0 / 1024.0).abs() < 0.01);
        assert!(r.p_value > 0.0 && r.p_two_sided <= 1.0);
    }

    #[test]
    fn permutation_errors() {
        assert_eq!(permutation_test(&[], 10, 0), Err(StatsError::Empty));
        assert_eq!(permutation_test(&[1.0], 0, 0), Err(StatsError::NoPermutations));
    }

    #[test]
    fn parallel_schedule_does_not_matter() {
        let d: Vec<f64> = (0..130).map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.4).collect();
        let a = permutation_test_with(&d, 3000, 5, Execution::Sequential).unwrap();
        let b = permutation_test_with(&d, 3000, 5, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bh_hand_examples() {
        let r = bh_correct(&[0.01, 0.02, 0.03, 0.04, 0.05], 0.05).unwrap();
        assert_eq!(r.rejected, vec![true; 5]);
        assert!(r.adjusted.iter().all(|&p| (p - 0.05).abs() < 1e-15));
        let r = bh_correct(&[0.04], 0.05).unwrap();
        assert_eq!((r.rejected[0], r.adjusted[0]), (true, 0.04));
        let r = bh_correct(&[0.6, 0.7], 0.05).unwrap();
        assert_eq!(r.rejected, [false, false]);
        assert_eq!(r.adjusted, [0.7, 0.7]);
        // step-up: a large p later in the order does not block earlier ones
        let r = bh_correct(&[0.03, 0.001, 0.9, 0.02], 0.05).unwrap();
        assert_eq!(r.rejected, [true, true, false, true]);
    }

    #[test]
    fn bh_errors() {
        assert_eq!(bh_correct(&[1.2], 0.05), Err(StatsError::BadPValue(1.2)));
        assert_eq!(bh_correct(&[0.2], 1.0), Err(StatsError::BadAlpha(1.0)));
    }

    #[test]
    fn spearman_examples() {
        let inc: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64)).collect();
        assert_eq!(spearman_rho(&inc, 100, 0).unwrap().rho, 1.0);
        let r = spearman_rho(&[(1.0, 2.0), (2.0, 3.0), (3.0, 1.0)], 1000, 0).unwrap();
        assert_abs_diff_eq!(r.rho, -0.5, epsilon = 1e-15);
        assert_eq!(spearman_rho(&[(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)], 10, 0), Err(StatsError::DegenerateRanks));
        assert!(matches!(spearman_rho(&[(1.0, 2.0)], 10, 0), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn average_ranks_on_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn kde_symmetry_and_normalisation() {
        let c = kde(&[-1.0, 1.0], Bandwidth::Auto).unwrap();
        let n = c.xs.len();
        for i in 0..n {
            assert!((c.density[i] - c.density[n - 1 - i]).abs() < 1e-9);
        }
        assert!((c.integral() - 1.0).abs() < 1e-3);
        let wide = kde(&[0.0, 0.001, 250.0, 3.0], Bandwidth::Fixed(0.01)).unwrap();
        assert!((wide.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kde_mode_at_spike() {
        let mut v = vec![2.5; 50];
        v.extend([0.0, 5.0]);
        let c = kde(&v, Bandwidth::Fixed(0.05)).unwrap();
        assert!((c.mode() - 2.5).abs() < 0.01);
        assert!(kde(&[1.0], Bandwidth::Auto).is_err());
        assert!(kde(&[1.0, 2.0], Bandwidth::Fixed(0.0)).is_err());
    }

    #[test]
    fn ks_detects_non_uniform() {
        let uniform: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
        assert!(ks_uniform(&uniform).unwrap().p_value > 0.99);
        let skewed: Vec<f64> = uniform.iter().map(|u| u * u).collect();
        assert!(ks_uniform(&skewed).unwrap().p_value < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_scale_invariant(d in prop::collection::vec(-3.0f64..3.0, 1..40), scale in 0.1f64..50.0, seed in any::<u64>()) {
            let a = permutation_test(&d, 300, seed).unwrap();
            let scaled: Vec<f64> = d.iter().map(|x| x * scale).collect();
            let b = permutation_test(&scaled, 300, seed).unwrap();
            prop_assert_eq!(a.n_at_least_as_extreme, b.n_at_least_as_extreme);
        }

        #[test]
        fn bh_monotone(p in prop::collection::vec(0.0f64..1.0, 1..30), which in any::<prop::sample::Index>(), factor in 0.0f64..1.0) {
            let before = bh_correct(&p, 0.1).unwrap();
            let mut lowered = p.clone();
            let i = which.index(p.len());
            lowered[i] *= factor;
            let after = bh_correct(&lowered, 0.1).unwrap();
            for j in 0..p.len() {
                prop_assert!(!before.rejected[j] || after.rejected[j]);
            }
        }

        #[test]
        fn spearman_monotone_invariance(xs in prop::collection::vec(-10.0f64..10.0, 3..20), ys in prop::collection::vec(-10.0f64..10.0, 3..20)) {
            let n = xs.len().min(ys.len());
            let pairs: Vec<(f64, f64)> = xs[..n].iter().copied().zip(ys[..n].iter().copied()).collect();
            if let Ok(a) = spearman_rho(&pairs, 1, 0) {
                let t: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.exp(), y * 3.0 + 1.0)).collect();
                let b = spearman_rho(&t, 1, 0).unwrap();
                prop_assert!((a.rho - b.rho).abs() < 1e-12);
            }
        }
    }
}
