//! Phonestheme mining: word-initial and word-final phone sequences whose
//! words carry more form–meaning information than random word sets.
//!
//! Suffixes are handled by reversing every form and mining prefixes, which
//! requires a model pair trained on the reversed lexicon.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::infotheory::{PerWordLoss, WordLoss};
use crate::lexicon::{Lexicon, PhoneId};
use crate::rng;
use crate::stats::{bh_correct, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum PhonesthemeError {
    #[error("k = {k} out of range for a word with {tokens} tokens")]
    KOutOfRange { k: usize, tokens: usize },
    #[error("no per-position bits for sign {0}")]
    MissingPositions(usize),
    #[error("sign {0} missing from one of the loss tables")]
    MissingSign(usize),
    #[error("candidate needs {n} words but only {pool} are eligible")]
    TooFewWords { n: usize, pool: usize },
    #[error("min_count must be at least 2, got {0}")]
    BadMinCount(usize),
    #[error("invalid k range {0}..={1}")]
    BadKRange(usize, usize),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, PhonesthemeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Prefix,
    Suffix,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Prefix => "prefix",
            Side::Suffix => "suffix",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffixCandidate {
    /// Phones in reading order.
    pub phones: Vec<PhoneId>,
    /// IPA rendering of `phones`.
    pub affix: String,
    pub side: Side,
    pub word_indices: Vec<usize>,
    pub count: usize,
    pub avg_pmi: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub bh_significant: bool,
    pub example_lemmata: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MineOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub min_count: usize,
    pub alpha: f64,
    pub n_samples: usize,
    pub n_examples: usize,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions { k_min: 1, k_max: 3, min_count: 20, alpha: 0.05, n_samples: 100_000, n_examples: 5 }
    }
}

/// Reverse every form; all other fields are kept.
pub fn reverse_forms(lex: &Lexicon) -> Lexicon {
    let mut out = lex.clone();
    for s in &mut out.signs {
        s.form.reverse();
    }
    out
}

/// Mean of `uncond − cond` over the first `k` positions of the evaluation
/// order (bits per phone). With `k = |form| + 1` this is the word's
/// per-phone delta.
pub fn pointwise_affix_mi(uncond: &WordLoss, cond: &WordLoss, k: usize) -> Result<f64> {
    let u = uncond.positions.as_ref().ok_or(PhonesthemeError::MissingPositions(uncond.sign))?;
    let c = cond.positions.as_ref().ok_or(PhonesthemeError::MissingPositions(cond.sign))?;
    let tokens = u.len().min(c.len());
    if k == 0 || k > tokens {
        return Err(PhonesthemeError::KOutOfRange { k, tokens });
    }
    Ok(u[..k].iter().zip(&c[..k]).map(|(a, b)| a - b).sum::<f64>() / k as f64)
}

/// Pointwise MI of the first `k` positions for every sign of the lexicon;
/// `None` for words shorter than `k` phones.
pub fn pmi_table(lex: &Lexicon, uncond: &PerWordLoss, cond: &PerWordLoss, k: usize) -> Result<Vec<Option<f64>>> {
    let (u, c) = (uncond.by_sign(), cond.by_sign());
    (0..lex.len())
        .map(|i| {
            if lex.signs[i].form.len() < k {
                return Ok(None);
            }
            let a = u.get(&i).ok_or(PhonesthemeError::MissingSign(i))?;
            let b = c.get(&i).ok_or(PhonesthemeError::MissingSign(i))?;
            pointwise_affix_mi(a, b, k).map(Some)
        })
        .collect()
}

/// Every distinct length-`k` initial or final sequence shared by at least
/// `min_count` words, for each `k` in the range. Word sets are ascending;
/// candidates are ordered by `k` then phones.
pub fn enumerate_candidates(lex: &Lexicon, k_min: usize, k_max: usize, side: Side, min_count: usize) -> Vec<AffixCandidate> {
    let mut out = Vec::new();
    for k in k_min.max(1)..=k_max {
        let mut groups: BTreeMap<Vec<PhoneId>, Vec<usize>> = BTreeMap::new();
        for (i, s) in lex.signs.iter().enumerate() {
            if s.form.len() < k {
                continue;
            }
            let key = match side {
                Side::Prefix => s.form[..k].to_vec(),
                Side::Suffix => s.form[s.form.len() - k..].to_vec(),
            };
            groups.entry(key).or_default().push(i);
        }
        for (phones, words) in groups {
            if words.len() >= min_count.max(1) {
                out.push(AffixCandidate {
                    affix: lex.inventory.render(&phones).replace(' ', ""),
                    phones,
                    side,
                    count: words.len(),
                    word_indices: words,
                    avg_pmi: f64::NAN,
                    p_value: f64::NAN,
                    p_adjusted: f64::NAN,
                    bh_significant: false,
                    example_lemmata: Vec::new(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffixTest {
    pub observed: f64,
    pub n_at_least_as_extreme: usize,
    pub p_value: f64,
}

/// Monte Carlo test of one word set against random sets of the same size
/// drawn without replacement from `pool_pmis` (the eligible words' values).
/// `p = (r + 1) / (n_samples + 1)` with `r` the number of samples whose mean
/// is at least the observed mean.
pub fn phonestheme_test(candidate_pmis: &[f64], pool_pmis: &[f64], n_samples: usize, seed: u64) -> Result<AffixTest> {
    let n = candidate_pmis.len();
    if n == 0 || n > pool_pmis.len() {
        return Err(PhonesthemeError::TooFewWords { n, pool: pool_pmis.len() });
    }
    if n_samples == 0 {
        return Err(PhonesthemeError::NoSamples);
    }
    let observed: f64 = candidate_pmis.iter().sum::<f64>() / n as f64;
    // summation order differs between sets, so ties are judged with a
    // rounding allowance
    let slack = 1e-10 * (1.0 + observed.abs());
    let mut r = 0usize;
    for s in 0..n_samples {
        let mut rng = rng::rng_for(seed, rng::stream::PHONESTHEME, s as u64);
        let idx = index::sample(&mut rng, pool_pmis.len(), n);
        let mean = idx.iter().map(|i| pool_pmis[i]).sum::<f64>() / n as f64;
        if mean >= observed - slack {
            r += 1;
        }
    }
    Ok(AffixTest { observed, n_at_least_as_extreme: r, p_value: (r + 1) as f64 / (n_samples + 1) as f64 })
}

/// Seed of a candidate: depends only on `k` and its phones in evaluation
/// order, so a suffix and the matching prefix of the reversed lexicon share it.
fn candidate_seed(seed: u64, eval_phones: &[PhoneId]) -> u64 {
    let key = rng::fnv1a(std::iter::once(eval_phones.len() as u64).chain(eval_phones.iter().map(|p| p.0 as u64)));
    rng::derive(seed, rng::stream::PHONESTHEME, key)
}

/// Test every prefix candidate of `lex` under the given model pair.
fn test_prefixes(
    lex: &Lexicon,
    uncond: &PerWordLoss,
    cond: &PerWordLoss,
    opts: &MineOptions,
    seed: u64,
    exec: Execution,
) -> Result<Vec<AffixCandidate>> {
    let mut out = Vec::new();
    for k in opts.k_min..=opts.k_max {
        let table = pmi_table(lex, uncond, cond, k)?;
        let pool: Vec<f64> = table.iter().flatten().copied().collect();
        let cands = enumerate_candidates(lex, k, k, Side::Prefix, opts.min_count);
        let tested = exec.map_slice(&cands, |cand| -> Result<AffixCandidate> {
            let pmis: Vec<f64> = cand.word_indices.iter().map(|&i| table[i].unwrap()).collect();
            let t = phonestheme_test(&pmis, &pool, opts.n_samples, candidate_seed(seed, &cand.phones))?;
            let mut ranked: Vec<(usize, f64)> = cand.word_indices.iter().copied().zip(pmis).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut c = cand.clone();
            c.avg_pmi = t.observed;
            c.p_value = t.p_value;
            c.example_lemmata = ranked.iter().take(opts.n_examples).map(|&(i, _)| lex.signs[i].lemma.clone()).collect();
            Ok(c)
        });
        for c in tested {
            out.push(c?);
        }
    }
    Ok(out)
}

/// Loss tables of a model pair: unconditional, then meaning-conditioned.
pub type ModelPair<'a> = (&'a PerWordLoss, &'a PerWordLoss);

/// Mine prefixes (with `forward`) and suffixes (with `reversed`, a pair
/// evaluated on [`reverse_forms`]), BH-correct across all candidates and sort
/// by adjusted p. Either side may be skipped.
pub fn mine(
    lex: &Lexicon,
    forward: Option<ModelPair<'_>>,
    reversed: Option<ModelPair<'_>>,
    opts: &MineOptions,
    seed: u64,
) -> Result<Vec<AffixCandidate>> {
    mine_with(lex, forward, reversed, opts, seed, Execution::default())
}

pub fn mine_with(
    lex: &Lexicon,
    forward: Option<ModelPair<'_>>,
    reversed: Option<ModelPair<'_>>,
    opts: &MineOptions,
    seed: u64,
    exec: Execution,
) -> Result<Vec<AffixCandidate>> {
    if opts.min_count < 2 {
        return Err(PhonesthemeError::BadMinCount(opts.min_count));
    }
    if opts.k_min == 0 || opts.k_min > opts.k_max {
        return Err(PhonesthemeError::BadKRange(opts.k_min, opts.k_max));
    }
    let mut all = Vec::new();
    if let Some((u, c)) = forward {
        all.extend(test_prefixes(lex, u, c, opts, seed, exec)?);
    }
    if let Some((u, c)) = reversed {
        let rev = reverse_forms(lex);
        for mut cand in test_prefixes(&rev, u, c, opts, seed, exec)? {
            cand.side = Side::Suffix;
            cand.phones.reverse();
            cand.affix = lex.inventory.render(&cand.phones).replace(' ', "");
            all.push(cand);
        }
    }
    if all.is_empty() {
        return Ok(all);
    }
    let p: Vec<f64> = all.iter().map(|c| c.p_value).collect();
    let bh = bh_correct(&p, opts.alpha)?;
    for (c, (rej, adj)) in all.iter_mut().zip(bh.rejected.into_iter().zip(bh.adjusted)) {
        c.bh_significant = rej;
        c.p_adjusted = adj;
    }
    all.sort_by(|a, b| {
        a.p_adjusted
            .total_cmp(&b.p_adjusted)
            .then(a.p_value.total_cmp(&b.p_value))
            .then(a.side.cmp(&b.side))
            .then(a.phones.len().cmp(&b.phones.len()))
            .then(a.phones.cmp(&b.phones))
    });
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::parse_lexicon;

    fn lex(forms: &[&str]) -> Lexicon {
        let mut tsv = String::from("lemma\tipa\tpos\n");
        for (i, f) in forms.iter().enumerate() {
            tsv.push_str(&format!("l{i}\t{f}\tN\n"));
        }
        parse_lexicon("x", tsv.as_bytes(), &Default::default(), Default::default()).unwrap().0
    }

    fn wl(sign: usize, bits: &[f64]) -> WordLoss {
        WordLoss { sign, total_bits: bits.iter().sum(), token_count: bits.len(), positions: Some(bits.to_vec()) }
    }

    #[test]
    fn banana_reverses() {
        let l = lex(&["banana", "a"]);
        let r = reverse_forms(&l);
        assert_eq!(r.form_string(0), "ananab");
        assert_eq!(r.form_string(1), "a");
        assert_eq!(reverse_forms(&r), l);
    }

    #[test]
    fn enumerate_examples() {
        let l = lex(&["kat", "kam", "tok"]);
        let c = enumerate_candidates(&l, 1, 1, Side::Prefix, 2);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].affix.as_str(), c[0].count), ("k", 2));
        assert_eq!(enumerate_candidates(&l, 1, 1, Side::Prefix, 1).len(), 2);
        let s = enumerate_candidates(&lex(&["kat", "mat"]), 2, 2, Side::Suffix, 2);
        assert_eq!((s[0].affix.as_str(), s[0].count), ("at", 2));
        assert!(enumerate_candidates(&l, 4, 4, Side::Prefix, 1).is_empty());
    }

    #[test]
    fn pointwise_mi_definition() {
        let u = wl(0, &[3.0, 2.0, 1.0]);
        let c = wl(0, &[1.0, 2.0, 0.0]);
        assert_eq!(pointwise_affix_mi(&u, &c, 1).unwrap(), 2.0);
        assert_eq!(pointwise_affix_mi(&u, &c, 2).unwrap(), 1.0);
        // whole word including EOS equals the per-phone delta
        assert_eq!(pointwise_affix_mi(&u, &c, 3).unwrap(), (u.total_bits - c.total_bits) / 3.0);
        assert_eq!(pointwise_affix_mi(&u, &u, 2).unwrap(), 0.0);
        assert!(matches!(pointwise_affix_mi(&u, &c, 4), Err(PhonesthemeError::KOutOfRange { .. })));
        let bare = WordLoss { positions: None, ..u.clone() };
        assert_eq!(pointwise_affix_mi(&bare, &c, 1), Err(PhonesthemeError::MissingPositions(0)));
    }

    #[test]
    fn whole_lexicon_candidate_has_p_one() {
        let pool = [0.3, -0.1, 0.5, 0.2];
        let t = phonestheme_test(&pool, &pool, 200, 1).unwrap();
        assert_eq!(t.p_value, 1.0);
        let flat = [0.7; 10];
        assert_eq!(phonestheme_test(&flat[..3], &flat, 200, 1).unwrap().p_value, 1.0);
        assert!(phonestheme_test(&flat, &flat[..3], 10, 1).is_err());
    }

    #[test]
    fn extreme_set_matches_exact_probability() {
        // top-2 of 5 distinct values: only one of the C(5,2)=10 subsets ties
        let pool = [5.0, 4.0, 0.0, 0.0, 0.0];
        let t = phonestheme_test(&pool[..2], &pool, 20_000, 3).unwrap();
        let r = t.n_at_least_as_extreme as f64 / 20_000.0;
        assert!((r - 0.1).abs() < 0.01, "{r}");
    }

    #[test]
    fn suffix_mining_equals_prefix_mining_on_reversed() {
        let l = lex(&["kat", "mat", "pat", "kit", "mit", "tak", "tam", "tok", "kot", "mot"]);
        let bits = |i: usize, len: usize| wl(i, &(0..=len).map(|j| ((i * 7 + j * 3) % 5) as f64 * 0.3).collect::<Vec<_>>());
        let u = PerWordLoss::new((0..l.len()).map(|i| bits(i, l.signs[i].form.len())).collect());
        let c = PerWordLoss::new(
            (0..l.len()).map(|i| WordLoss { sign: i, ..bits(i + 1, l.signs[i].form.len()) }).collect(),
        );
        let opts = MineOptions { min_count: 2, n_samples: 500, ..Default::default() };
        let suf = mine(&l, None, Some((&u, &c)), &opts, 9).unwrap();
        let pre = mine(&reverse_forms(&l), Some((&u, &c)), None, &opts, 9).unwrap();
        assert_eq!(suf.len(), pre.len());
        for (s, p) in suf.iter().zip(&pre) {
            let mut rev = p.phones.clone();
            rev.reverse();
            assert_eq!(s.phones, rev);
            assert_eq!(s.p_value, p.p_value);
            assert_eq!(s.p_adjusted, p.p_adjusted);
            assert_eq!(s.avg_pmi, p.avg_pmi);
        }
    }

    #[test]
    fn no_candidates_gives_empty_list() {
        let l = lex(&["ab", "cd"]);
        let u = PerWordLoss::new((0..2).map(|i| wl(i, &[1.0, 1.0, 1.0])).collect());
        assert!(mine(&l, Some((&u, &u)), None, &MineOptions::default(), 1).unwrap().is_empty());
        let bad = MineOptions { min_count: 1, ..Default::default() };
        assert_eq!(mine(&l, Some((&u, &u)), None, &bad, 1).unwrap_err(), PhonesthemeError::BadMinCount(1));
    }
}
