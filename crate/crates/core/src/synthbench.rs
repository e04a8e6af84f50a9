//! Synthetic lexica with exactly computable entropies.
//!
//! Each meaning cluster owns a first-order Markov chain over phones with
//! per-phone stopping probabilities and a hard length cap. Meanings are the
//! cluster centroid plus isotropic Gaussian noise. Because the cap keeps the
//! string space finite, `H(W)`, `H(W | cluster)` and their difference can be
//! computed by enumeration and used as ground truth for the estimators.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::infotheory::{PerWordLoss, WordLoss};
use crate::lexicon::{Lexicon, LexiconError, Phone, PhoneInventory, Sign};
use crate::rng;

/// Largest `|Σ|^L` accepted for enumeration.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error("enumeration bound exceeded: |Σ|^L = {0:e}")]
    EnumerationTooLarge(f64),
    #[error("n_words must be at least 1")]
    NoWords,
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("spec file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub prior: f64,
    /// Distribution of the first phone.
    pub initial: Vec<f64>,
    /// `transition[p][q]`: probability of `q` after `p`, given no stop.
    pub transition: Vec<Vec<f64>>,
    /// Probability of ending the word after phone `p` (below the cap).
    pub stop: Vec<f64>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAffix {
    pub cluster: usize,
    /// Alphabet indices every word of `cluster` starts with.
    pub prefix: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alphabet: Vec<String>,
    pub max_len: usize,
    pub clusters: Vec<ClusterSpec>,
    pub noise: f64,
    #[serde(default)]
    pub planted: Option<PlantedAffix>,
    /// Word class emitted for each cluster; defaults to `c0`, `c1`, ...
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
}

/// Entropy of one component of the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntropy {
    pub total_bits: f64,
    pub expected_tokens: f64,
    pub bits_per_phone: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEntropy {
    /// `H(W) / E[|w|+1]`
    pub bits_per_phone: f64,
    pub total_bits: f64,
    pub expected_tokens: f64,
    /// `Σ_c π_c H(W|c) / E[|w|+1]`
    pub conditional_bits_per_phone: f64,
    pub per_cluster: Vec<ClusterEntropy>,
    pub n_strings: usize,
}

impl ExactEntropy {
    pub fn mi(&self) -> f64 {
        self.bits_per_phone - self.conditional_bits_per_phone
    }
}

/// A generated lexicon with its latent structure.
#[derive(Debug, Clone)]
pub struct Generated {
    pub lexicon: Lexicon,
    pub clusters: Vec<usize>,
    /// Forms as alphabet indices.
    pub forms: Vec<Vec<usize>>,
}

fn check_dist(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !(0.0..=1.0).contains(p) || p.is_nan()) {
        return Err(SynthError::Infeasible(format!("{what}: probability outside [0, 1]")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(SynthError::Infeasible(format!("{what}: sums to {s}")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn n_phones(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.centroid.len())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SyntheticSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn class_name(&self, c: usize) -> String {
        match &self.class_names {
            Some(names) => names[c].clone(),
            None => format!("c{c}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_phones();
        if s == 0 || self.clusters.is_empty() {
            return Err(SynthError::Infeasible("empty alphabet or no clusters".into()));
        }
        if self.max_len == 0 {
            return Err(SynthError::Infeasible("max_len must be at least 1".into()));
        }
        let mut sorted = self.alphabet.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != s || self.alphabet.iter().any(|a| a.is_empty() || a.chars().any(char::is_whitespace)) {
            return Err(SynthError::Infeasible("alphabet symbols must be distinct and non-blank".into()));
        }
        let size = (s as f64).powi(self.max_len as i32);
        if size > ENUMERATION_LIMIT {
            return Err(SynthError::EnumerationTooLarge(size));
        }
        check_dist(&self.clusters.iter().map(|c| c.prior).collect::<Vec<_>>(), "cluster prior")?;
        let d = self.dim();
        if d == 0 {
            return Err(SynthError::Infeasible("centroids must have dimension ≥ 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(SynthError::Infeasible("noise must be finite and non-negative".into()));
        }
        for (k, c) in self.clusters.iter().enumerate() {
            if c.initial.len() != s || c.stop.len() != s || c.transition.len() != s || c.centroid.len() != d {
                return Err(SynthError::Infeasible(format!("cluster {k}: dimension mismatch")));
            }
            check_dist(&c.initial, &format!("cluster {k} initial"))?;
            for (p, row) in c.transition.iter().enumerate() {
                if row.len() != s {
                    return Err(SynthError::Infeasible(format!("cluster {k}: transition row {p} length")));
                }
                check_dist(row, &format!("cluster {k} transition {p}"))?;
            }
            if c.stop.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SynthError::Infeasible(format!("cluster {k}: stop outside [0, 1]")));
            }
        }
        if let Some(pl) = &self.planted {
            if pl.cluster >= self.n_clusters() || pl.prefix.is_empty() || pl.prefix.len() > self.max_len {
                return Err(SynthError::Infeasible("planted affix out of range".into()));
            }
            if pl.prefix.iter().any(|&p| p >= s) {
                return Err(SynthError::Infeasible("planted prefix phone out of alphabet".into()));
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.n_clusters() || names.iter().any(|n| n.trim().is_empty()) {
                return Err(SynthError::Infeasible("one non-empty class name per cluster".into()));
            }
        }
        Ok(())
    }

    /// Distribution of the next token after `prefix` under `cluster`:
    /// index 0 is end-of-string, index `p+1` is alphabet phone `p`.
    pub fn step_probs(&self, cluster: usize, prefix: &[usize]) -> Vec<f64> {
        let s = self.n_phones();
        let c = &self.clusters[cluster];
        let mut out = vec![0.0; s + 1];
        if let Some(pl) = self.planted.as_ref().filter(|p| p.cluster == cluster) {
            if prefix.len() < pl.prefix.len() {
                if prefix == &pl.prefix[..prefix.len()] {
                    out[pl.prefix[prefix.len()] + 1] = 1.0;
                }
                return out;
            }
            if prefix[..pl.prefix.len()] != pl.prefix[..] {
                return out;
            }
        }
        match prefix.last() {
            None => out[1..].copy_from_slice(&c.initial),
            Some(_) if prefix.len() >= self.max_len => out[0] = 1.0,
            Some(&last) => {
                let stop = c.stop[last];
                out[0] = stop;
                for (o, t) in out[1..].iter_mut().zip(&c.transition[last]) {
                    *o = (1.0 - stop) * t;
                }
            }
        }
        out
    }

    /// Probability of the complete word under one cluster.
    pub fn word_prob(&self, cluster: usize, form: &[usize]) -> f64 {
        let mut p = 1.0;
        for t in 0..=form.len() {
            let step = self.step_probs(cluster, &form[..t]);
            p *= if t < form.len() { step[form[t] + 1] } else { step[0] };
            if p == 0.0 {
                break;
            }
        }
        p
    }

    /// Per-position bits (each phone, then end-of-string) of `form` under
    /// the true cluster, or under the prior mixture when `cluster` is None.
    pub fn position_bits(&self, form: &[usize], cluster: Option<usize>) -> Vec<f64> {
        let m = self.n_clusters();
        let mut weights: Vec<f64> = match cluster {
            Some(c) => (0..m).map(|k| if k == c { 1.0 } else { 0.0 }).collect(),
            None => self.clusters.iter().map(|c| c.prior).collect(),
        };
        let mut bits = Vec::with_capacity(form.len() + 1);
        for t in 0..=form.len() {
            let token = if t < form.len() { form[t] + 1 } else { 0 };
            let total: f64 = weights.iter().sum();
            let mut p = 0.0;
            for (k, w) in weights.iter_mut().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let step = self.step_probs(k, &form[..t])[token];
                p += *w * step;
                *w *= step;
            }
            bits.push(-(p / total).log2());
        }
        bits
    }

    /// Visit every string of positive mixture probability with its
    /// per-cluster probabilities.
    fn enumerate<F: FnMut(&[usize], &[f64])>(&self, mut visit: F) -> Result<()> {
        self.validate()?;
        let mut prefix = Vec::with_capacity(self.max_len);
        let start: Vec<f64> = vec![1.0; self.n_clusters()];
        self.dfs(&mut prefix, &start, &mut visit);
        Ok(())
    }

    fn dfs<F: FnMut(&[usize], &[f64])>(&self, prefix: &mut Vec<usize>, probs: &[f64], visit: &mut F) {
        let m = self.n_clusters();
        let steps: Vec<Vec<f64>> = (0..m)
            .map(|k| if probs[k] > 0.0 { self.step_probs(k, prefix) } else { vec![0.0; self.n_phones() + 1] })
            .collect();
        let end: Vec<f64> = (0..m).map(|k| probs[k] * steps[k][0]).collect();
        if end.iter().any(|&p| p > 0.0) {
            visit(prefix, &end);
        }
        if prefix.len() >= self.max_len {
            return;
        }
        for q in 0..self.n_phones() {
            let next: Vec<f64> = (0..m).map(|k| probs[k] * steps[k][q + 1]).collect();
            if next.iter().any(|&p| p > 0.0) {
                prefix.push(q);
                self.dfs(prefix, &next, visit);
                prefix.pop();
            }
        }
    }

    /// Exact `H(W)` and `H(W | cluster)` by enumeration, per phone.
    pub fn exact_entropy(&self) -> Result<ExactEntropy> {
        let m = self.n_clusters();
        let priors: Vec<f64> = self.clusters.iter().map(|c| c.prior).collect();
        let mut total_bits = 0.0;
        let mut expected_tokens = 0.0;
        let mut mass = 0.0;
        let mut cl_bits = vec![0.0; m];
        let mut cl_tokens = vec![0.0; m];
        let mut n_strings = 0;
        self.enumerate(|w, pc| {
            let tokens = (w.len() + 1) as f64;
            let p: f64 = pc.iter().zip(&priors).map(|(a, b)| a * b).sum();
            if p > 0.0 {
                total_bits -= p * p.log2();
                expected_tokens += p * tokens;
                mass += p;
                n_strings += 1;
            }
            for k in 0..m {
                if pc[k] > 0.0 {
                    cl_bits[k] -= pc[k] * pc[k].log2();
                    cl_tokens[k] += pc[k] * tokens;
                }
            }
        })?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(SynthError::Infeasible(format!("string probabilities sum to {mass}")));
        }
        let per_cluster = (0..m)
            .map(|k| ClusterEntropy {
                total_bits: cl_bits[k],
                expected_tokens: cl_tokens[k],
                bits_per_phone: cl_bits[k] / cl_tokens[k],
            })
            .collect();
        let cond_total: f64 = (0..m).map(|k| priors[k] * cl_bits[k]).sum();
        Ok(ExactEntropy {
            bits_per_phone: total_bits / expected_tokens,
            total_bits,
            expected_tokens,
            conditional_bits_per_phone: cond_total / expected_tokens,
            per_cluster,
            n_strings,
        })
    }

    /// Exact `MI(W; cluster)` in bits per phone.
    pub fn exact_mi(&self) -> Result<f64> {
        Ok(self.exact_entropy()?.mi().max(0.0))
    }

    /// Exact probability of every reachable string under the mixture.
    pub fn string_probabilities(&self) -> Result<Vec<(Vec<usize>, f64)>> {
        let priors: Vec<f64> = self.clusters.iter().map(|c| c.prior).collect();
        let mut out = Vec::new();
        self.enumerate(|w, pc| {
            let p: f64 = pc.iter().zip(&priors).map(|(a, b)| a * b).sum();
            out.push((w.to_vec(), p));
        })?;
        Ok(out)
    }

    fn sample_form(&self, cluster: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
        let mut form = Vec::new();
        loop {
            let step = self.step_probs(cluster, &form);
            // validated distributions always have positive mass
            let tok = WeightedIndex::new(&step).expect("normalised step distribution").sample(rng);
            if tok == 0 {
                return form;
            }
            form.push(tok - 1);
        }
    }

    /// Draw `n_words` i.i.d. signs. Word `i` uses its own random stream,
    /// so the output is fixed by `seed`.
    pub fn generate(&self, n_words: usize, seed: u64, language: &str) -> Result<Generated> {
        self.validate()?;
        if n_words == 0 {
            return Err(SynthError::NoWords);
        }
        let prior = WeightedIndex::new(self.clusters.iter().map(|c| c.prior))
            .map_err(|e| SynthError::Infeasible(e.to_string()))?;
        let inventory = PhoneInventory::new(self.alphabet.iter().map(Phone::new));
        let ids: Vec<_> = self.alphabet.iter().map(|a| inventory.id(&Phone::new(a)).unwrap()).collect();
        let width = (n_words as f64).log10() as usize + 1;
        let mut clusters = Vec::with_capacity(n_words);
        let mut forms = Vec::with_capacity(n_words);
        let mut signs = Vec::with_capacity(n_words);
        for i in 0..n_words {
            let mut r = rng::rng_for(seed, rng::stream::SYNTH, i as u64);
            let c = prior.sample(&mut r);
            let form = self.sample_form(c, &mut r);
            let meaning = self.clusters[c]
                .centroid
                .iter()
                .map(|&m| m + self.noise * rand::Rng::sample::<f64, _>(&mut r, StandardNormal))
                .collect();
            signs.push(Sign {
                lemma: format!("w{i:0width$}"),
                form: form.iter().map(|&p| ids[p]).collect(),
                meaning,
                pos: self.class_name(c),
                concept_id: None,
            });
            clusters.push(c);
            forms.push(form);
        }
        let lexicon = Lexicon::new(language, inventory, signs)?;
        Ok(Generated { lexicon, clusters, forms })
    }

    /// Losses of the exact model pair on generated words: the prior mixture
    /// (unconditional) and the generating cluster (conditional). Per-position
    /// bits are included.
    pub fn exact_losses(&self, generated: &Generated, indices: &[usize]) -> (PerWordLoss, PerWordLoss) {
        let word = |i: usize, cluster: Option<usize>| {
            let bits = self.position_bits(&generated.forms[i], cluster);
            WordLoss { sign: i, total_bits: bits.iter().sum(), token_count: bits.len(), positions: Some(bits) }
        };
        let uncond = indices.iter().map(|&i| word(i, None)).collect();
        let cond = indices.iter().map(|&i| word(i, Some(generated.clusters[i]))).collect();
        (PerWordLoss::new(uncond), PerWordLoss::new(cond))
    }

    /// Exact losses of the model pair that reads every word right to left,
    /// i.e. on [`reverse_forms`](crate::phonesthemes::reverse_forms) of the
    /// generated lexicon. Word totals equal the left-to-right ones; only the
    /// split over positions differs.
    pub fn exact_reversed_losses(&self, generated: &Generated, indices: &[usize]) -> Result<(PerWordLoss, PerWordLoss)> {
        let oracle = ReversedOracle::build(self)?;
        let priors: Vec<f64> = self.clusters.iter().map(|c| c.prior).collect();
        let word = |i: usize, weights: &[f64]| {
            let bits = oracle.position_bits(&generated.forms[i], weights);
            WordLoss { sign: i, total_bits: bits.iter().sum(), token_count: bits.len(), positions: Some(bits) }
        };
        let uncond = indices.iter().map(|&i| word(i, &priors)).collect();
        let cond = indices
            .iter()
            .map(|&i| {
                let w: Vec<f64> = (0..self.n_clusters()).map(|k| if k == generated.clusters[i] { 1.0 } else { 0.0 }).collect();
                word(i, &w)
            })
            .collect();
        Ok((PerWordLoss::new(uncond), PerWordLoss::new(cond)))
    }

    /// Plug-in entropy (bits per phone) of the empirical string distribution.
    pub fn plug_in_entropy(forms: &[Vec<usize>]) -> f64 {
        let mut counts = HashMap::new();
        for f in forms {
            *counts.entry(f.as_slice()).or_insert(0usize) += 1;
        }
        let n = forms.len() as f64;
        let h: f64 = counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum();
        let tokens: f64 = forms.iter().map(|f| (f.len() + 1) as f64).sum::<f64>() / n;
        h / tokens
    }
}

/// Per-cluster suffix masses: `suffix[s][k]` is the probability under
/// cluster `k` that a word ends with the phones `s` (stored last phone
/// first), `whole[w][k]` the probability of the word itself.
struct ReversedOracle {
    suffix: HashMap<Vec<usize>, Vec<f64>>,
    whole: HashMap<Vec<usize>, Vec<f64>>,
}

impl ReversedOracle {
    fn build(spec: &SyntheticSpec) -> Result<Self> {
        let m = spec.n_clusters();
        let mut suffix: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        let mut whole = HashMap::new();
        spec.enumerate(|w, pc| {
            let rev: Vec<usize> = w.iter().rev().copied().collect();
            for j in 0..=rev.len() {
                let e = suffix.entry(rev[..j].to_vec()).or_insert_with(|| vec![0.0; m]);
                for k in 0..m {
                    e[k] += pc[k];
                }
            }
            whole.insert(rev, pc.to_vec());
        })?;
        Ok(ReversedOracle { suffix, whole })
    }

    fn position_bits(&self, form: &[usize], weights: &[f64]) -> Vec<f64> {
        let mass = |v: Option<&Vec<f64>>| v.map_or(0.0, |v| v.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>());
        let rev: Vec<usize> = form.iter().rev().copied().collect();
        let mut bits = Vec::with_capacity(rev.len() + 1);
        let mut prev = mass(self.suffix.get(&rev[..0]));
        for j in 1..=rev.len() {
            let cur = mass(self.suffix.get(&rev[..j]));
            bits.push(-(cur / prev).log2());
            prev = cur;
        }
        bits.push(-(mass(self.whole.get(&rev)) / prev).log2());
        bits
    }
}

// ---------------------------------------------------------------------------
// Ready-made specs

fn alphabet(n: usize) -> Vec<String> {
    (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn centroid(dim: usize, c: usize) -> Vec<f64> {
    (0..dim).map(|j| if j == c % dim { 1.0 } else { 0.0 }).collect()
}

impl SyntheticSpec {
    /// Uniform over the single-phone words `a` and `b`.
    pub fn uniform_single_phone() -> Self {
        SyntheticSpec {
            alphabet: alphabet(2),
            max_len: 1,
            clusters: vec![ClusterSpec {
                prior: 1.0,
                initial: uniform(2),
                transition: vec![uniform(2); 2],
                stop: vec![1.0; 2],
                centroid: vec![0.0],
            }],
            noise: 0.0,
            planted: None,
            class_names: None,
        }
    }

    /// Two equiprobable clusters over `{a, b}`, words of length exactly 2:
    /// the cluster fixes the first phone, the second is uniform.
    pub fn two_cluster() -> Self {
        let cluster = |c: usize| ClusterSpec {
            prior: 0.5,
            initial: one_hot(2, c),
            transition: vec![uniform(2); 2],
            stop: vec![0.0; 2],
            centroid: centroid(2, c),
        };
        SyntheticSpec {
            alphabet: alphabet(2),
            max_len: 2,
            clusters: vec![cluster(0), cluster(1)],
            noise: 0.0,
            planted: None,
            class_names: None,
        }
    }

    /// Two equiprobable clusters; cluster `c` starts with phone `c` with
    /// probability `q` (the other of `a`/`b` otherwise), followed by a
    /// uniform tail over `n_phones` phones with stop probability 1/2, capped
    /// at `max_len`. `q = 1/2` gives zero MI.
    pub fn first_phone_family(q: f64, n_phones: usize, max_len: usize, dim: usize, noise: f64) -> Self {
        let cluster = |c: usize| {
            let mut initial = vec![0.0; n_phones];
            initial[c] = q;
            initial[1 - c] = 1.0 - q;
            ClusterSpec {
                prior: 0.5,
                initial,
                transition: vec![uniform(n_phones); n_phones],
                stop: vec![0.5; n_phones],
                centroid: centroid(dim, c),
            }
        };
        SyntheticSpec {
            alphabet: alphabet(n_phones),
            max_len,
            clusters: vec![cluster(0), cluster(1)],
            noise,
            planted: None,
            class_names: None,
        }
    }

    /// Member of [`first_phone_family`](Self::first_phone_family) whose exact
    /// MI equals `target` (bisection on `q`).
    pub fn with_target_mi(target: f64, n_phones: usize, max_len: usize, dim: usize, noise: f64) -> Result<Self> {
        let make = |q| Self::first_phone_family(q, n_phones, max_len, dim, noise);
        let max = make(1.0).exact_mi()?;
        if !(0.0..=max).contains(&target) {
            return Err(SynthError::Infeasible(format!("target MI {target} outside [0, {max}]")));
        }
        let (mut lo, mut hi) = (0.5, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if make(mid).exact_mi()? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(make(0.5 * (lo + hi)))
    }

    /// Random chains: every cluster gets its own Dirichlet(α) initial and
    /// transition rows (shared across clusters when `shared` is set, giving
    /// zero MI) and stop probabilities in `[0.2, 0.6]`.
    pub fn random(n_phones: usize, n_clusters: usize, max_len: usize, dim: usize, noise: f64, alpha: f64, shared: bool, seed: u64) -> Self {
        use rand_distr::Gamma;
        let mut r = rng::rng_for(seed, rng::stream::SYNTH, u64::MAX);
        let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
        let dirichlet = |r: &mut rand_chacha::ChaCha8Rng| {
            let g: Vec<f64> = (0..n_phones).map(|_| gamma.sample(r).max(1e-12)).collect();
            let s: f64 = g.iter().sum();
            g.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let chain = |r: &mut rand_chacha::ChaCha8Rng| {
            let initial = dirichlet(r);
            let transition = (0..n_phones).map(|_| dirichlet(r)).collect::<Vec<_>>();
            let stop = (0..n_phones).map(|_| rand::Rng::random_range(r, 0.2..0.6)).collect::<Vec<_>>();
            (initial, transition, stop)
        };
        let base = chain(&mut r);
        let clusters = (0..n_clusters)
            .map(|c| {
                let (initial, transition, stop) = if shared { base.clone() } else { chain(&mut r) };
                ClusterSpec { prior: 1.0 / n_clusters as f64, initial, transition, stop, centroid: centroid(dim, c) }
            })
            .collect();
        SyntheticSpec { alphabet: alphabet(n_phones), max_len, clusters, noise, planted: None, class_names: None }
    }

    /// Null background chain shared by every cluster, plus one cluster of
    /// prior `planted_prior` forced to begin with `prefix`.
    pub fn planted_prefix(n_phones: usize, max_len: usize, n_null_clusters: usize, planted_prior: f64, prefix: Vec<usize>) -> Self {
        let n = n_null_clusters + 1;
        let null_prior = (1.0 - planted_prior) / n_null_clusters as f64;
        let clusters = (0..n)
            .map(|c| ClusterSpec {
                prior: if c == n_null_clusters { planted_prior } else { null_prior },
                initial: uniform(n_phones),
                transition: vec![uniform(n_phones); n_phones],
                stop: vec![0.3; n_phones],
                centroid: centroid(n, c),
            })
            .collect();
        SyntheticSpec {
            alphabet: alphabet(n_phones),
            max_len,
            clusters,
            noise: 0.0,
            planted: Some(PlantedAffix { cluster: n_null_clusters, prefix }),
            class_names: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_single_phone_is_half_bit() {
        let e = SyntheticSpec::uniform_single_phone().exact_entropy().unwrap();
        assert_abs_diff_eq!(e.total_bits, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.expected_tokens, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.bits_per_phone, 0.5, epsilon = 1e-12);
        assert_eq!(e.n_strings, 2);
    }

    #[test]
    fn reversed_oracle_preserves_totals() {
        let spec = SyntheticSpec::planted_prefix(3, 3, 1, 0.3, vec![1, 2]);
        let g = spec.generate(200, 5, "xx").unwrap();
        let idx: Vec<usize> = (0..200).collect();
        let (fu, fc) = spec.exact_losses(&g, &idx);
        let (ru, rc) = spec.exact_reversed_losses(&g, &idx).unwrap();
        for (a, b) in fu.words.iter().zip(&ru.words).chain(fc.words.iter().zip(&rc.words)) {
            assert_abs_diff_eq!(a.total_bits, b.total_bits, epsilon = 1e-9);
            assert_eq!(a.token_count, b.token_count);
        }
        // reading "ab" backwards under the two-cluster spec: b is uniform
        // for both clusters, then a pins down the cluster
        let spec = SyntheticSpec::two_cluster();
        let g = Generated {
            lexicon: spec.generate(1, 0, "xx").unwrap().lexicon,
            clusters: vec![0],
            forms: vec![vec![0, 1]],
        };
        let (u, c) = spec.exact_reversed_losses(&g, &[0]).unwrap();
        let bits = |t: &PerWordLoss| t.words[0].positions.clone().unwrap();
        assert_eq!(bits(&u), [1.0, 1.0, 0.0]);
        assert_eq!(bits(&c), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_cluster_entropies() {
        let spec = SyntheticSpec::two_cluster();
        let e = spec.exact_entropy().unwrap();
        assert_abs_diff_eq!(e.bits_per_phone, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.conditional_bits_per_phone, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.exact_mi().unwrap(), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(e.n_strings, 4);
    }

    #[test]
    fn deterministic_word_has_zero_entropy() {
        let mut spec = SyntheticSpec::uniform_single_phone();
        spec.clusters[0].initial = vec![1.0, 0.0];
        assert_eq!(spec.exact_entropy().unwrap().bits_per_phone, 0.0);
    }

    #[test]
    fn identical_chains_have_zero_mi() {
        let spec = SyntheticSpec::random(3, 3, 4, 2, 0.1, 1.0, true, 5);
        assert!(spec.exact_mi().unwrap().abs() < 1e-12);
        let spec = SyntheticSpec::random(3, 3, 4, 2, 0.1, 1.0, false, 5);
        assert!(spec.exact_mi().unwrap() > 1e-3);
    }

    #[test]
    fn enumeration_bound_is_enforced() {
        let mut spec = SyntheticSpec::random(10, 1, 7, 1, 0.0, 1.0, true, 1);
        assert!(spec.validate().is_ok());
        spec.max_len = 8;
        assert!(matches!(spec.exact_entropy(), Err(SynthError::EnumerationTooLarge(_))));
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        let mut spec = SyntheticSpec::two_cluster();
        spec.clusters[0].prior = 0.7;
        assert!(matches!(spec.validate(), Err(SynthError::Infeasible(_))));
        let mut spec = SyntheticSpec::two_cluster();
        spec.clusters[1].transition[0] = vec![0.5, 0.6];
        assert!(spec.validate().is_err());
        assert!(matches!(SyntheticSpec::two_cluster().generate(0, 1, "x"), Err(SynthError::NoWords)));
    }

    #[test]
    fn position_bits_agree_with_word_probability() {
        let spec = SyntheticSpec::random(3, 2, 4, 2, 0.0, 0.7, false, 9);
        for (w, p) in spec.string_probabilities().unwrap() {
            let bits: f64 = spec.position_bits(&w, None).iter().sum();
            assert_abs_diff_eq!(bits, -p.log2(), epsilon = 1e-9);
            for c in 0..2 {
                let pc = spec.word_prob(c, &w);
                if pc > 0.0 {
                    let bits: f64 = spec.position_bits(&w, Some(c)).iter().sum();
                    assert_abs_diff_eq!(bits, -pc.log2(), epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec::random(4, 2, 5, 3, 0.5, 1.0, false, 2);
        let a = spec.generate(50, 7, "x").unwrap();
        let b = spec.generate(50, 7, "x").unwrap();
        let c = spec.generate(50, 8, "x").unwrap();
        assert_eq!(a.lexicon, b.lexicon);
        assert_ne!(a.lexicon, c.lexicon);
        assert!(a.forms.iter().all(|f| !f.is_empty() && f.len() <= 5));
    }

    #[test]
    fn zero_noise_meanings_identify_cluster() {
        let spec = SyntheticSpec::random(3, 3, 3, 3, 0.0, 1.0, false, 4);
        let g = spec.generate(200, 1, "x").unwrap();
        for (s, &c) in g.lexicon.signs.iter().zip(&g.clusters) {
            assert_eq!(s.meaning, spec.clusters[c].centroid);
            assert_eq!(s.pos, format!("c{c}"));
        }
    }

    #[test]
    fn planted_prefix_starts_every_word_of_its_cluster() {
        let spec = SyntheticSpec::planted_prefix(4, 5, 2, 0.2, vec![2, 3]);
        let g = spec.generate(500, 3, "x").unwrap();
        let planted: Vec<_> = g.clusters.iter().enumerate().filter(|(_, &c)| c == 2).collect();
        assert!(!planted.is_empty());
        for (i, _) in planted {
            assert_eq!(&g.forms[i][..2], &[2, 3]);
        }
        let e = spec.exact_entropy().unwrap();
        assert!(e.mi() > 0.0);
    }

    #[test]
    fn target_mi_family_hits_targets() {
        for target in [0.0, 0.1, 0.2, 0.3, 0.33] {
            let spec = SyntheticSpec::with_target_mi(target, 4, 4, 2, 0.0).unwrap();
            assert_abs_diff_eq!(spec.exact_mi().unwrap(), target, epsilon = 1e-9);
        }
    }

    #[test]
    fn plug_in_entropy_converges() {
        let spec = SyntheticSpec::random(3, 2, 3, 2, 0.0, 1.0, false, 6);
        let exact = spec.exact_entropy().unwrap().bits_per_phone;
        let g = spec.generate(10_000, 11, "x").unwrap();
        assert!((SyntheticSpec::plug_in_entropy(&g.forms) - exact).abs() < 0.02);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticSpec::planted_prefix(3, 3, 1, 0.5, vec![1]);
        let back = SyntheticSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
    }
}
