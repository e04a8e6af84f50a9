//! Entropy, mutual information, uncertainty coefficients and effect sizes
//! computed from per-word model losses.
//!
//! All quantities are in bits per phone, micro-averaged: total bits over
//! total predicted tokens, where each word contributes `|form| + 1` tokens
//! (its phones plus end-of-string).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, PermutationResult};

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("empty loss table")]
    Empty,
    #[error("loss tables cover different sign sets")]
    SignSetMismatch,
    #[error("entropy must be positive, got {0}")]
    NonPositiveEntropy(f64),
    #[error("need at least 2 deltas, got {0}")]
    TooFewDeltas(usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

pub type Result<T> = std::result::Result<T, InfoError>;

/// Loss of one model on one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordLoss {
    /// Index of the sign in its lexicon; the identity used to pair tables.
    pub sign: usize,
    /// −log₂ Q(form, EOS).
    pub total_bits: f64,
    /// `|form| + 1`.
    pub token_count: usize,
    /// Per-position bits, `token_count` entries, when requested.
    pub positions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerWordLoss {
    pub words: Vec<WordLoss>,
}

impl PerWordLoss {
    pub fn new(words: Vec<WordLoss>) -> Self {
        PerWordLoss { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn total_bits(&self) -> f64 {
        self.words.iter().map(|w| w.total_bits).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.words.iter().map(|w| w.token_count).sum()
    }

    /// Concatenate two tables.
    pub fn concat(&self, other: &PerWordLoss) -> PerWordLoss {
        PerWordLoss { words: self.words.iter().chain(&other.words).cloned().collect() }
    }

    pub fn by_sign(&self) -> HashMap<usize, &WordLoss> {
        self.words.iter().map(|w| (w.sign, w)).collect()
    }

    /// Restrict to the given sign ids, keeping table order.
    pub fn restrict(&self, signs: &[usize]) -> PerWordLoss {
        let keep: std::collections::HashSet<usize> = signs.iter().copied().collect();
        PerWordLoss { words: self.words.iter().filter(|w| keep.contains(&w.sign)).cloned().collect() }
    }
}

/// Entropy estimate from one model's losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub bits_per_phone: f64,
    pub total_bits: f64,
    pub total_tokens: usize,
    pub n_words: usize,
}

pub fn entropy_estimate(losses: &PerWordLoss) -> Result<EntropyEstimate> {
    if losses.is_empty() {
        return Err(InfoError::Empty);
    }
    let total_bits = losses.total_bits();
    let total_tokens = losses.total_tokens();
    Ok(EntropyEstimate {
        bits_per_phone: total_bits / total_tokens as f64,
        total_bits,
        total_tokens,
        n_words: losses.len(),
    })
}

/// How per-word deltas are normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Bits saved per token of the word.
    #[default]
    PerPhone,
    /// Total bits saved on the word.
    PerWord,
}

/// MI estimate plus the per-word deltas used for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub mi: f64,
    pub deltas: Vec<f64>,
    /// Sign ids, aligned with `deltas`.
    pub signs: Vec<usize>,
}

/// `H_Q(W) − H_Q(W|V)` from matched loss tables.
pub fn mi_estimate(unconditional: &PerWordLoss, conditional: &PerWordLoss, mode: DeltaMode) -> Result<MiEstimate> {
    let h = entropy_estimate(unconditional)?;
    let hc = entropy_estimate(conditional)?;
    let cond = conditional.by_sign();
    if cond.len() != conditional.len() || unconditional.len() != conditional.len() {
        return Err(InfoError::SignSetMismatch);
    }
    let mut deltas = Vec::with_capacity(unconditional.len());
    let mut signs = Vec::with_capacity(unconditional.len());
    for u in &unconditional.words {
        let c = cond.get(&u.sign).ok_or(InfoError::SignSetMismatch)?;
        let diff = u.total_bits - c.total_bits;
        deltas.push(match mode {
            DeltaMode::PerPhone => diff / u.token_count as f64,
            DeltaMode::PerWord => diff,
        });
        signs.push(u.sign);
    }
    Ok(MiEstimate { mi: h.bits_per_phone - hc.bits_per_phone, deltas, signs })
}

/// `H_Q(W|C) − H_Q(W|V,C)`: MI between form and meaning given word class.
pub fn conditional_mi(uncond_given_c: &PerWordLoss, cond_given_vc: &PerWordLoss, mode: DeltaMode) -> Result<MiEstimate> {
    mi_estimate(uncond_given_c, cond_given_vc, mode)
}

/// `mi / h`; negative values are possible with estimated quantities.
pub fn uncertainty_coefficient(mi: f64, h: f64) -> Result<f64> {
    if h <= 0.0 || h.is_nan() {
        return Err(InfoError::NonPositiveEntropy(h));
    }
    Ok(mi / h)
}

/// Paired effect size: mean of the deltas over their sample std (ddof 1).
pub fn cohens_d(deltas: &[f64]) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(InfoError::TooFewDeltas(deltas.len()));
    }
    let sd = stats::sample_std(deltas);
    if sd == 0.0 || !sd.is_finite() {
        return Err(InfoError::ZeroVariance);
    }
    Ok(stats::mean(deltas) / sd)
}

/// One systematicity measurement: MI, uncertainty coefficient, effect size
/// and permutation test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Systematicity {
    pub mi: f64,
    pub uncertainty: f64,
    pub cohens_d: Option<f64>,
    pub permutation: PermutationResult,
}

impl Systematicity {
    /// `baseline` is the reference entropy table (`H(W)` or `H(W|C)`),
    /// `conditioned` adds the meaning.
    pub fn measure(
        baseline: &PerWordLoss,
        conditioned: &PerWordLoss,
        mode: DeltaMode,
        n_perm: usize,
        seed: u64,
    ) -> Result<Self> {
        let est = mi_estimate(baseline, conditioned, mode)?;
        let h = entropy_estimate(baseline)?.bits_per_phone;
        Ok(Systematicity {
            mi: est.mi,
            uncertainty: uncertainty_coefficient(est.mi, h)?,
            cohens_d: cohens_d(&est.deltas).ok(),
            permutation: stats::permutation_test(&est.deltas, n_perm, seed)?,
        })
    }
}

/// Per-language systematicity report; the row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub language: String,
    pub h_w: EntropyEstimate,
    pub h_w_given_v: Option<EntropyEstimate>,
    pub h_w_given_c: Option<EntropyEstimate>,
    pub h_w_given_vc: Option<EntropyEstimate>,
    /// `MI(W;V)`, with `U(W|V) = MI / H(W)`.
    pub systematicity: Option<Systematicity>,
    /// `MI(W;V|C)`, with `U = MI(W;V|C) / H(W|C)`.
    pub systematicity_given_pos: Option<Systematicity>,
}

/// Loss tables for the model kinds that were run, all on the same signs.
#[derive(Debug, Clone, Default)]
pub struct ModelLosses {
    pub uncond: Option<PerWordLoss>,
    pub meaning: Option<PerWordLoss>,
    pub class: Option<PerWordLoss>,
    pub meaning_and_class: Option<PerWordLoss>,
}

impl MiReport {
    pub fn build(language: &str, losses: &ModelLosses, mode: DeltaMode, n_perm: usize, seed: u64) -> Result<Self> {
        let est = |t: &Option<PerWordLoss>| t.as_ref().map(entropy_estimate).transpose();
        let h_w = est(&losses.uncond)?.ok_or(InfoError::Empty)?;
        let systematicity = match (&losses.uncond, &losses.meaning) {
            (Some(u), Some(m)) => Some(Systematicity::measure(u, m, mode, n_perm, seed)?),
            _ => None,
        };
        let systematicity_given_pos = match (&losses.class, &losses.meaning_and_class) {
            (Some(c), Some(vc)) => Some(Systematicity::measure(c, vc, mode, n_perm, seed.wrapping_add(1))?),
            _ => None,
        };
        Ok(MiReport {
            language: language.to_string(),
            h_w,
            h_w_given_v: est(&losses.meaning)?,
            h_w_given_c: est(&losses.class)?,
            h_w_given_vc: est(&losses.meaning_and_class)?,
            systematicity,
            systematicity_given_pos,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table(rows: &[(f64, usize)]) -> PerWordLoss {
        PerWordLoss::new(
            rows.iter()
                .enumerate()
                .map(|(i, &(b, t))| WordLoss { sign: i, total_bits: b, token_count: t, positions: None })
                .collect(),
        )
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_estimate(&table(&[(6.0, 3)])).unwrap().bits_per_phone, 2.0);
        assert_abs_diff_eq!(entropy_estimate(&table(&[(6.0, 3), (2.0, 2)])).unwrap().bits_per_phone, 1.6);
        assert_eq!(entropy_estimate(&PerWordLoss::default()), Err(InfoError::Empty));
    }

    #[test]
    fn identical_tables_have_zero_mi() {
        let t = table(&[(6.0, 3), (2.0, 2), (9.5, 4)]);
        let e = mi_estimate(&t, &t, DeltaMode::PerPhone).unwrap();
        assert_eq!(e.mi, 0.0);
        assert!(e.deltas.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn table_one_english_row() {
        // H(W) = 3.401, H(W|V) = 3.291 → MI 0.110, U ≈ 3.23 %
        let mi = 3.401 - 3.291;
        assert_abs_diff_eq!(mi, 0.110, epsilon = 1e-12);
        assert_abs_diff_eq!(uncertainty_coefficient(mi, 3.401).unwrap(), 0.0323, epsilon = 1e-4);
        assert_eq!(uncertainty_coefficient(0.0, 3.0).unwrap(), 0.0);
        assert_abs_diff_eq!(uncertainty_coefficient(-0.0388 * 2.5, 2.5).unwrap(), -0.0388, epsilon = 1e-15);
        assert!(uncertainty_coefficient(0.1, 0.0).is_err());
    }

    #[test]
    fn mismatched_sign_sets_fail() {
        let a = table(&[(1.0, 2), (2.0, 2)]);
        let mut b = a.clone();
        b.words[1].sign = 7;
        assert_eq!(mi_estimate(&a, &b, DeltaMode::PerPhone), Err(InfoError::SignSetMismatch));
        assert_eq!(mi_estimate(&a, &table(&[(1.0, 2)]), DeltaMode::PerPhone), Err(InfoError::SignSetMismatch));
    }

    #[test]
    fn deltas_follow_mode() {
        let u = table(&[(6.0, 3), (4.0, 2)]);
        let c = table(&[(3.0, 3), (4.0, 2)]);
        assert_eq!(mi_estimate(&u, &c, DeltaMode::PerPhone).unwrap().deltas, [1.0, 0.0]);
        assert_eq!(mi_estimate(&u, &c, DeltaMode::PerWord).unwrap().deltas, [3.0, 0.0]);
        assert_abs_diff_eq!(conditional_mi(&u, &c, DeltaMode::PerPhone).unwrap().mi, 0.6);
    }

    #[test]
    fn cohens_d_examples() {
        assert_eq!(cohens_d(&[1.0, 1.0, 1.0]), Err(InfoError::ZeroVariance));
        assert_eq!(cohens_d(&[0.1, -0.1]).unwrap(), 0.0);
        assert_abs_diff_eq!(cohens_d(&[1.0, 2.0, 3.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(cohens_d(&[1.0]), Err(InfoError::TooFewDeltas(1)));
    }

    #[test]
    fn report_identities() {
        let u = table(&[(6.0, 3), (4.0, 2), (7.0, 4), (5.0, 3)]);
        let m = table(&[(5.0, 3), (4.0, 2), (6.0, 4), (4.5, 3)]);
        let c = table(&[(5.5, 3), (3.9, 2), (6.8, 4), (5.0, 3)]);
        let vc = table(&[(5.0, 3), (3.9, 2), (6.5, 4), (4.9, 3)]);
        let losses = ModelLosses { uncond: Some(u.clone()), meaning: Some(m.clone()), class: Some(c.clone()), meaning_and_class: Some(vc.clone()) };
        let r = MiReport::build("xx", &losses, DeltaMode::PerPhone, 200, 1).unwrap();
        let s = r.systematicity.as_ref().unwrap();
        assert_eq!(s.mi, r.h_w.bits_per_phone - r.h_w_given_v.unwrap().bits_per_phone);
        assert_eq!(s.uncertainty, s.mi / r.h_w.bits_per_phone);
        let sp = r.systematicity_given_pos.as_ref().unwrap();
        assert_eq!(sp.mi, r.h_w_given_c.unwrap().bits_per_phone - r.h_w_given_vc.unwrap().bits_per_phone);
        assert_eq!(sp.uncertainty, sp.mi / r.h_w_given_c.unwrap().bits_per_phone);
    }

    proptest! {
        #[test]
        fn antisymmetry_and_micro_average(rows_a in prop::collection::vec((0.0f64..30.0, 2usize..9), 1..20), noise in prop::collection::vec(-3.0f64..3.0, 20)) {
            let a = table(&rows_a);
            let b = table(&rows_a.iter().zip(&noise).map(|(&(x, t), n)| ((x + n).max(0.0), t)).collect::<Vec<_>>());
            let ab = mi_estimate(&a, &b, DeltaMode::PerPhone).unwrap().mi;
            let ba = mi_estimate(&b, &a, DeltaMode::PerPhone).unwrap().mi;
            prop_assert_eq!(ab, -ba);
            prop_assert_eq!(mi_estimate(&a, &a, DeltaMode::PerPhone).unwrap().mi, 0.0);

            let ea = entropy_estimate(&a).unwrap();
            let eb = entropy_estimate(&b).unwrap();
            let joint = entropy_estimate(&a.concat(&b)).unwrap();
            let weighted = (ea.bits_per_phone * ea.total_tokens as f64 + eb.bits_per_phone * eb.total_tokens as f64)
                / (ea.total_tokens + eb.total_tokens) as f64;
            prop_assert!((joint.bits_per_phone - weighted).abs() < 1e-12);
        }
    }
}
