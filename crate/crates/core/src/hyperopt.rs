//! Bayesian optimisation with a Gaussian-process surrogate and expected
//! improvement, plus a random-search baseline.
//!
//! Points live in the unit cube; [`SearchSpace`] maps them to native units.
//! Objectives are minimised.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum HyperoptError {
    #[error("search space has no dimensions")]
    EmptySpace,
    #[error("dimension {0}: bounds must be finite with lower < upper (and positive for log scale)")]
    BadBounds(String),
    #[error("budget must be at least 1")]
    BadBudget,
    #[error("every trial diverged")]
    AllDiverged,
    #[error("kernel matrix is singular even with jitter")]
    Singular,
    #[error("point has {found} coordinates, space has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("objective failed: {0}")]
    Objective(String),
    #[error("search log: {0}")]
    Log(String),
}

pub type Result<T> = std::result::Result<T, HyperoptError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Integer,
    Continuous,
    LogContinuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimKind,
    pub lower: f64,
    pub upper: f64,
}

impl Dimension {
    pub fn new(name: &str, kind: DimKind, lower: f64, upper: f64) -> Self {
        Dimension { name: name.into(), kind, lower, upper }
    }

    fn to_native(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimKind::Continuous => self.lower + u * (self.upper - self.lower),
            DimKind::LogContinuous => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
            DimKind::Integer => (self.lower + u * (self.upper - self.lower)).round().clamp(self.lower, self.upper),
        }
    }

    fn to_unit(&self, x: f64) -> f64 {
        let u = match self.kind {
            DimKind::LogContinuous => (x.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
            _ => (x - self.lower) / (self.upper - self.lower),
        };
        u.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            dims: vec![
                Dimension::new("layers", DimKind::Integer, 1.0, 3.0),
                Dimension::new("hidden_size", DimKind::Integer, 32.0, 512.0),
                Dimension::new("pca_d", DimKind::Integer, 2.0, 300.0),
                Dimension::new("dropout", DimKind::Continuous, 0.0, 0.5),
            ],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(HyperoptError::EmptySpace);
        }
        for d in &self.dims {
            let ok = d.lower.is_finite()
                && d.upper.is_finite()
                && d.lower < d.upper
                && (d.kind != DimKind::LogContinuous || d.lower > 0.0);
            if !ok {
                return Err(HyperoptError::BadBounds(d.name.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Native values (integers rounded) of a unit-cube point.
    pub fn to_native(&self, unit: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(unit).map(|(d, &u)| d.to_native(u)).collect()
    }

    pub fn to_unit(&self, native: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(native).map(|(d, &x)| d.to_unit(x)).collect()
    }

    /// Snap a unit point onto the representable grid (integers rounded).
    pub fn round(&self, unit: &[f64]) -> Vec<f64> {
        self.to_unit(&self.to_native(unit))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub unit: Vec<f64>,
    pub native: Vec<f64>,
    /// Validation bits per phone, or the penalty for diverged trials.
    pub objective: f64,
    pub status: TrialStatus,
}

// ---------------------------------------------------------------------------
// Gaussian process

/// Kernel hyperparameters: `k(x, y) = signal_var · exp(−½ Σ ((x_d − y_d)/ℓ_d)²)`
/// plus `noise_var` on the diagonal, around a constant prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    pub mean: f64,
}

impl GpHyper {
    pub fn isotropic(dim: usize, length_scale: f64, signal_var: f64, noise_var: f64) -> Self {
        GpHyper { length_scales: vec![length_scale; dim], signal_var, noise_var, mean: 0.0 }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.signal_var * (-0.5 * r2).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub hyper: GpHyper,
    xs: Vec<Vec<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

fn factor(k: &DMatrix<f64>, scale: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    for jitter in [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4] {
        let m = k + DMatrix::identity(n, n) * (jitter * scale);
        if let Some(c) = m.cholesky() {
            return Ok(c);
        }
    }
    Err(HyperoptError::Singular)
}

fn gram(xs: &[Vec<f64>], h: &GpHyper) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| h.kernel(&xs[i], &xs[j]) + if i == j { h.noise_var } else { 0.0 })
}

/// Condition the GP on observations. An empty set gives the prior.
pub fn gp_fit(xs: &[Vec<f64>], ys: &[f64], hyper: &GpHyper) -> Result<GpPosterior> {
    if xs.is_empty() {
        return Ok(GpPosterior { hyper: hyper.clone(), xs: Vec::new(), chol: None, alpha: DVector::zeros(0) });
    }
    for x in xs {
        if x.len() != hyper.length_scales.len() {
            return Err(HyperoptError::DimensionMismatch { expected: hyper.length_scales.len(), found: x.len() });
        }
    }
    let chol = factor(&gram(xs, hyper), hyper.signal_var.max(1e-12))?;
    let r = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - hyper.mean));
    let alpha = chol.solve(&r);
    Ok(GpPosterior { hyper: hyper.clone(), xs: xs.to_vec(), chol: Some(chol), alpha })
}

impl GpPosterior {
    /// Posterior mean and variance of the latent function at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.hyper.signal_var;
        let Some(chol) = &self.chol else {
            return (self.hyper.mean, prior);
        };
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| self.hyper.kernel(xi, x)));
        let mu = self.hyper.mean + ks.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        (mu, (prior - v.dot(&v)).max(0.0))
    }

    pub fn n_obs(&self) -> usize {
        self.xs.len()
    }
}

/// Log marginal likelihood and its gradient with respect to
/// `(log ℓ_1..log ℓ_D, log signal_var, log noise_var)`.
fn log_marginal(xs: &[Vec<f64>], ys: &DVector<f64>, h: &GpHyper) -> Option<(f64, Vec<f64>)> {
    let n = xs.len();
    let d = h.length_scales.len();
    let k = gram(xs, h);
    let chol = k.clone().cholesky()?;
    let alpha = chol.solve(ys);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let lml = -0.5 * ys.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let kij = h.kernel(&xs[i], &xs[j]);
            let wij = w[(i, j)];
            for (dd, g) in grad.iter_mut().enumerate().take(d) {
                let diff = (xs[i][dd] - xs[j][dd]) / h.length_scales[dd];
                *g += 0.5 * wij * kij * diff * diff;
            }
            grad[d] += 0.5 * wij * kij;
            if i == j {
                grad[d + 1] += 0.5 * wij * h.noise_var;
            }
        }
    }
    Some((lml, grad))
}

/// Fit length-scales, signal and noise variance by multi-start gradient
/// ascent on the log marginal likelihood (log-parameterised, box bounded).
/// The prior mean is the sample mean of `ys`.
pub fn fit_hyperparameters(xs: &[Vec<f64>], ys: &[f64], seed: u64) -> GpHyper {
    let d = xs.first().map_or(0, Vec::len);
    let mean = if ys.is_empty() { 0.0 } else { ys.iter().sum::<f64>() / ys.len() as f64 };
    let mut default = GpHyper::isotropic(d, 0.3, 1.0, 1e-4);
    default.mean = mean;
    if xs.len() < 2 {
        return default;
    }
    let centred = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - mean));
    let lo: Vec<f64> = std::iter::repeat_n(0.01f64.ln(), d).chain([1e-3f64.ln(), 1e-8f64.ln()]).collect();
    let hi: Vec<f64> = std::iter::repeat_n(10f64.ln(), d).chain([100f64.ln(), 1f64.ln()]).collect();
    let unpack = |theta: &[f64]| GpHyper {
        length_scales: theta[..d].iter().map(|t| t.exp()).collect(),
        signal_var: theta[d].exp(),
        noise_var: theta[d + 1].exp(),
        mean,
    };
    let mut r = rng::rng_for(seed, rng::stream::HYPEROPT, u64::MAX - 1);
    let mut best: Option<(f64, GpHyper)> = None;
    for start in 0..5 {
        let mut theta: Vec<f64> = if start == 0 {
            std::iter::repeat_n(0.3f64.ln(), d).chain([0.0, 1e-4f64.ln()]).collect()
        } else {
            lo.iter().zip(&hi).map(|(a, b)| r.random_range(*a..*b)).collect()
        };
        let (mut m, mut v) = (vec![0.0; d + 2], vec![0.0; d + 2]);
        let mut current = None;
        for t in 1..=150 {
            let Some((lml, g)) = log_marginal(xs, &centred, &unpack(&theta)) else { break };
            current = Some(lml);
            for i in 0..d + 2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let step = 0.05 * (m[i] / (1.0 - 0.9f64.powi(t))) / ((v[i] / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
                theta[i] = (theta[i] + step).clamp(lo[i], hi[i]);
            }
        }
        let final_lml = log_marginal(xs, &centred, &unpack(&theta)).map(|x| x.0).or(current);
        if let Some(l) = final_lml.filter(|l| l.is_finite()) {
            if best.as_ref().is_none_or(|b| l > b.0) {
                best = Some((l, unpack(&theta)));
            }
        }
    }
    best.map_or(default, |b| b.1)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form expected improvement below `best` for a Gaussian with mean
/// `mu` and standard deviation `sigma`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 || !sigma.is_finite() {
        return (best - mu).max(0.0);
    }
    let z = (best - mu) / sigma;
    (sigma * (z * std_normal_cdf(z) + std_normal_pdf(z))).max(0.0)
}

impl GpPosterior {
    pub fn expected_improvement(&self, best: f64, x: &[f64]) -> f64 {
        let (mu, var) = self.predict(x);
        expected_improvement(mu, var.sqrt(), best)
    }
}

// ---------------------------------------------------------------------------
// Proposals

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Point `i` of a Halton sequence with a seeded Cranley–Patterson rotation.
pub fn halton_point(i: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng_for(seed, rng::stream::HYPEROPT, u64::MAX);
    (0..dim)
        .map(|d| {
            let shift: f64 = r.random();
            let base = PRIMES.get(d).copied().unwrap_or(2 * d as u64 + 1);
            (radical_inverse(i as u64 + 1, base) + shift).fract()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalOptions {
    pub n_init: usize,
    pub n_candidates: usize,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        ProposalOptions { n_init: 5, n_candidates: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    /// Rounded unit-cube point.
    pub unit: Vec<f64>,
    pub native: Vec<f64>,
    /// EI of the proposal; `None` during the space-filling phase.
    pub ei: Option<f64>,
    /// Largest EI among the (rounded) random candidates.
    pub best_candidate_ei: Option<f64>,
}

/// Objectives used for the surrogate: diverged trials keep their penalty.
fn observations(trials: &[Trial]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (trials.iter().map(|t| t.unit.clone()).collect(), trials.iter().map(|t| t.objective).collect())
}

/// Next point to evaluate. The first `n_init` come from a shifted Halton
/// sequence; afterwards the rounded point maximising EI over random
/// candidates, polished by a shrinking coordinate search. Fixed by
/// `(trials, seed)`.
pub fn propose_next(trials: &[Trial], space: &SearchSpace, seed: u64, opts: &ProposalOptions) -> Result<Proposal> {
    space.validate()?;
    let dim = space.len();
    if trials.len() < opts.n_init || trials.is_empty() {
        let unit = space.round(&halton_point(trials.len(), dim, seed));
        return Ok(Proposal { native: space.to_native(&unit), unit, ei: None, best_candidate_ei: None });
    }
    let (xs, ys) = observations(trials);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    let zs: Vec<f64> = ys.iter().map(|y| (y - mean) / scale).collect();
    let hyper = fit_hyperparameters(&xs, &zs, rng::derive(seed, rng::stream::HYPEROPT, trials.len() as u64));
    let gp = gp_fit(&xs, &zs, &hyper)?;
    let best = zs.iter().copied().fold(f64::INFINITY, f64::min);
    let ei = |u: &[f64]| gp.expected_improvement(best, &space.round(u));

    let mut r = rng::rng_for(seed, rng::stream::HYPEROPT, trials.len() as u64);
    let mut best_point = Vec::new();
    let mut best_ei = f64::NEG_INFINITY;
    for _ in 0..opts.n_candidates.max(1) {
        let c: Vec<f64> = (0..dim).map(|_| r.random()).collect();
        let e = ei(&c);
        if e > best_ei {
            best_ei = e;
            best_point = c;
        }
    }
    let grid_best = best_ei;
    let mut step = 0.05;
    while step > 1e-3 {
        let mut improved = false;
        for d in 0..dim {
            for dir in [-1.0, 1.0] {
                let mut c = best_point.clone();
                c[d] = (c[d] + dir * step).clamp(0.0, 1.0);
                let e = ei(&c);
                if e > best_ei {
                    best_ei = e;
                    best_point = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let unit = space.round(&best_point);
    Ok(Proposal { native: space.to_native(&unit), unit, ei: Some(best_ei), best_candidate_ei: Some(grid_best) })
}

// ---------------------------------------------------------------------------
// Search loop

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Bayes,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub budget: usize,
    pub mode: SearchMode,
    pub proposal: ProposalOptions,
    /// Added to the worst finite objective to score diverged trials.
    pub divergence_margin: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { budget: 50, mode: SearchMode::Bayes, proposal: ProposalOptions::default(), divergence_margin: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Outcome of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    Ok(f64),
    Diverged,
}

/// Penalty for a diverged trial given the history so far.
fn penalty(history: &[Trial], margin: f64) -> f64 {
    history
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .map(|t| t.objective)
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .map_or(100.0, |w| w + margin)
}

/// Run (or resume, when `history` is non-empty) a search up to `budget`
/// trials. Each completed trial is appended to `log` as one JSON line.
pub fn run_search<F>(
    mut objective: F,
    space: &SearchSpace,
    opts: &SearchOptions,
    seed: u64,
    mut history: Vec<Trial>,
    mut log: Option<&mut dyn Write>,
) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> std::result::Result<Evaluation, String>,
{
    space.validate()?;
    if opts.budget == 0 {
        return Err(HyperoptError::BadBudget);
    }
    while history.len() < opts.budget {
        let i = history.len();
        let unit = match opts.mode {
            SearchMode::Bayes => propose_next(&history, space, seed, &opts.proposal)?.unit,
            SearchMode::Random => {
                let mut r = rng::rng_for(seed, rng::stream::HYPEROPT, i as u64);
                space.round(&(0..space.len()).map(|_| r.random()).collect::<Vec<f64>>())
            }
        };
        let native = space.to_native(&unit);
        let (objective, status) = match objective(&native).map_err(HyperoptError::Objective)? {
            Evaluation::Ok(v) if v.is_finite() => (v, TrialStatus::Ok),
            _ => (penalty(&history, opts.divergence_margin), TrialStatus::Diverged),
        };
        let trial = Trial { index: i, unit, native, objective, status };
        log::info!("trial {i}: {:?} -> {objective:.5} ({status:?})", trial.native);
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&trial).map_err(|e| HyperoptError::Log(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| HyperoptError::Log(e.to_string()))?;
        }
        history.push(trial);
    }
    let best = history
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)))
        .cloned()
        .ok_or(HyperoptError::AllDiverged)?;
    Ok(SearchResult { best, history })
}

/// Read a JSON-lines search log. Blank lines are ignored.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HyperoptError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trial = serde_json::from_str(&line).map_err(|e| HyperoptError::Log(format!("line {}: {e}", n + 1)))?;
        if t.index != out.len() {
            return Err(HyperoptError::Log(format!("line {}: trial index {} out of sequence", n + 1, t.index)));
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ei_closed_form() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.0, 0.0, 1.0), 1.0);
        assert_abs_diff_eq!(expected_improvement(0.0, 1.0, 0.0), 0.398_942_280_4, epsilon = 1e-9);
        assert!(expected_improvement(5.0, 0.1, 0.0) >= 0.0);
    }

    #[test]
    fn single_observation_is_interpolated() {
        let h = GpHyper { mean: 0.0, ..GpHyper::isotropic(2, 0.5, 1.0, 1e-12) };
        let gp = gp_fit(&[vec![0.3, 0.7]], &[2.5], &h).unwrap();
        let (mu, var) = gp.predict(&[0.3, 0.7]);
        assert_abs_diff_eq!(mu, 2.5, epsilon = 1e-6);
        assert!(var <= gp.predict(&[0.9, 0.0]).1);
    }

    #[test]
    fn two_point_posterior_matches_hand_algebra() {
        let h = GpHyper { mean: 0.0, ..GpHyper::isotropic(1, 0.5, 1.0, 0.01) };
        let (x1, x2, y1, y2) = (0.2, 0.6, 1.0, -0.5);
        let gp = gp_fit(&[vec![x1], vec![x2]], &[y1, y2], &h).unwrap();
        let k = |a: f64, b: f64| (-0.5 * ((a - b) / 0.5f64).powi(2)).exp();
        let (a, b, d) = (k(x1, x1) + 0.01, k(x1, x2), k(x2, x2) + 0.01);
        let det = a * d - b * b;
        let kinv = [[d / det, -b / det], [-b / det, a / det]];
        for x in [0.4, 0.1, 0.9] {
            let ks = [k(x, x1), k(x, x2)];
            let w = [kinv[0][0] * y1 + kinv[0][1] * y2, kinv[1][0] * y1 + kinv[1][1] * y2];
            assert_abs_diff_eq!(gp.predict(&[x]).0, ks[0] * w[0] + ks[1] * w[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_gp_is_prior() {
        let h = GpHyper { mean: 0.7, ..GpHyper::isotropic(1, 0.5, 2.0, 0.01) };
        let gp = gp_fit(&[], &[], &h).unwrap();
        assert_eq!(gp.predict(&[0.1]), (0.7, 2.0));
    }

    #[test]
    fn marginal_likelihood_gradient_matches_finite_differences() {
        let xs = vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.3], vec![0.4, 0.4]];
        let ys = DVector::from_vec(vec![0.3, -1.0, 0.5, 0.2]);
        let h = GpHyper { length_scales: vec![0.4, 0.7], signal_var: 1.3, noise_var: 0.05, mean: 0.0 };
        let (_, g) = log_marginal(&xs, &ys, &h).unwrap();
        let theta = [0.4f64.ln(), 0.7f64.ln(), 1.3f64.ln(), 0.05f64.ln()];
        for i in 0..4 {
            let at = |delta: f64| {
                let mut t = theta;
                t[i] += delta;
                let h = GpHyper { length_scales: vec![t[0].exp(), t[1].exp()], signal_var: t[2].exp(), noise_var: t[3].exp(), mean: 0.0 };
                log_marginal(&xs, &ys, &h).unwrap().0
            };
            let numeric = (at(1e-6) - at(-1e-6)) / 2e-6;
            assert_abs_diff_eq!(g[i], numeric, epsilon = 1e-5);
        }
    }

    #[test]
    fn space_round_trip_and_rounding() {
        let s = SearchSpace::default();
        let n = s.to_native(&[0.0, 1.0, 0.5, 0.5]);
        assert_eq!(n, vec![1.0, 512.0, 151.0, 0.25]);
        let u = s.round(&[0.26, 0.3, 0.3, 0.3]);
        let n = s.to_native(&u);
        assert!(n[..3].iter().all(|v| v.fract() == 0.0));
        assert_eq!(s.to_native(&u), n);
        let bad = SearchSpace { dims: vec![Dimension::new("x", DimKind::LogContinuous, 0.0, 1.0)] };
        assert!(bad.validate().is_err());
    }

    fn quad(x: &[f64]) -> std::result::Result<Evaluation, String> {
        Ok(Evaluation::Ok((x[0] - 0.3).powi(2)))
    }

    fn unit_space() -> SearchSpace {
        SearchSpace { dims: vec![Dimension::new("x", DimKind::Continuous, 0.0, 1.0)] }
    }

    #[test]
    fn proposals_are_deterministic_and_in_bounds() {
        let s = SearchSpace::default();
        let p = propose_next(&[], &s, 3, &Default::default()).unwrap();
        assert!(p.unit.iter().all(|u| (0.0..=1.0).contains(u)));
        let opts = SearchOptions { budget: 8, ..Default::default() };
        let f = |x: &[f64]| Ok(Evaluation::Ok(x[1] / 512.0 + (x[3] - 0.2).powi(2)));
        let hist = run_search(f, &s, &opts, 5, Vec::new(), None).unwrap().history;
        let a = propose_next(&hist, &s, 5, &Default::default()).unwrap();
        let b = propose_next(&hist, &s, 5, &Default::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.ei.unwrap() >= a.best_candidate_ei.unwrap());
        for (d, v) in s.dims.iter().zip(&a.native) {
            assert!(*v >= d.lower && *v <= d.upper);
        }
    }

    #[test]
    fn budget_one_returns_single_point() {
        let opts = SearchOptions { budget: 1, ..Default::default() };
        let r = run_search(quad, &unit_space(), &opts, 1, Vec::new(), None).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.best, r.history[0]);
    }

    #[test]
    fn diverged_trials_are_penalised() {
        let opts = SearchOptions { budget: 6, ..Default::default() };
        let mut n = 0;
        let f = |x: &[f64]| {
            n += 1;
            Ok(if n % 2 == 0 { Evaluation::Diverged } else { Evaluation::Ok(x[0]) })
        };
        let r = run_search(f, &unit_space(), &opts, 1, Vec::new(), None).unwrap();
        let worst = r.history.iter().filter(|t| t.status == TrialStatus::Ok).map(|t| t.objective).fold(0.0, f64::max);
        assert!(r.history.iter().filter(|t| t.status == TrialStatus::Diverged).all(|t| t.objective > worst));
        let all_bad = run_search(|_: &[f64]| Ok(Evaluation::Diverged), &unit_space(), &opts, 1, Vec::new(), None);
        assert_eq!(all_bad.unwrap_err(), HyperoptError::AllDiverged);
    }

    #[test]
    fn resume_from_log_matches_uninterrupted_run() {
        let opts = SearchOptions { budget: 9, ..Default::default() };
        let full = run_search(quad, &unit_space(), &opts, 4, Vec::new(), None).unwrap();
        let mut buf = Vec::new();
        let short = SearchOptions { budget: 6, ..opts.clone() };
        run_search(quad, &unit_space(), &short, 4, Vec::new(), Some(&mut buf)).unwrap();
        let prior = read_log(buf.as_slice()).unwrap();
        assert_eq!(prior.len(), 6);
        let resumed = run_search(quad, &unit_space(), &opts, 4, prior, None).unwrap();
        assert_eq!(full, resumed);
    }

    #[test]
    fn quadratic_is_found() {
        let opts = SearchOptions { budget: 20, ..Default::default() };
        let hits = (0..10)
            .filter(|&s| {
                let r = run_search(quad, &unit_space(), &opts, s, Vec::new(), None).unwrap();
                (r.best.native[0] - 0.3).abs() <= 0.05
            })
            .count();
        assert!(hits >= 9, "{hits}");
    }
}
