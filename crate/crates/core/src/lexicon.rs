//! Lexicon data model and ingestion: IPA tokenization, TSV lexica,
//! word-vector text files and deterministic fold splitting.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::rng;

/// Symbol used for the reserved end-of-string token.
pub const EOS_SYMBOL: &str = "</s>";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("empty word form")]
    EmptyForm,
    #[error("form {0:?} begins with a combining mark")]
    LeadingCombiningMark(String),
    #[error("form {0:?} contains whitespace (use pre-tokenized mode for space-separated phones)")]
    Whitespace(String),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("lexicon has no usable rows")]
    EmptyLexicon,
    #[error("line {line}: expected {expected} vector components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-numeric field {field:?}")]
    NonNumeric { line: usize, field: String },
    #[error("cannot split {n} signs into {k} folds")]
    TooManyFolds { k: usize, n: usize },
    #[error("fold count must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("phone {0:?} is not in the inventory")]
    UnknownPhone(String),
    #[error("meaning vectors have inconsistent dimensions ({0} vs {1})")]
    InconsistentMeaning(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LexiconError>;

/// One phone: a base character plus any attached modifiers or diacritics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phone(String);

impl Phone {
    pub fn new(symbol: impl Into<String>) -> Self {
        Phone(symbol.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Dense index of a phone in a [`PhoneInventory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhoneId(pub u32);

impl PhoneId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered phone set. Index 0 is always the end-of-string token; the
/// remaining phones follow in sorted symbol order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "InventoryRepr", into = "InventoryRepr")]
pub struct PhoneInventory {
    phones: Vec<Phone>,
    lookup: HashMap<Phone, PhoneId>,
}

#[derive(Serialize, Deserialize)]
struct InventoryRepr {
    phones: Vec<Phone>,
}

impl From<InventoryRepr> for PhoneInventory {
    fn from(r: InventoryRepr) -> Self {
        PhoneInventory::from_ordered(r.phones)
    }
}

impl From<PhoneInventory> for InventoryRepr {
    fn from(inv: PhoneInventory) -> Self {
        InventoryRepr { phones: inv.phones }
    }
}

impl PhoneInventory {
    /// Build from a set of phones; EOS is prepended and the rest sorted.
    pub fn new<I: IntoIterator<Item = Phone>>(phones: I) -> Self {
        let set: BTreeSet<Phone> = phones.into_iter().filter(|p| p.as_str() != EOS_SYMBOL).collect();
        let mut ordered = Vec::with_capacity(set.len() + 1);
        ordered.push(Phone::new(EOS_SYMBOL));
        ordered.extend(set);
        Self::from_ordered(ordered)
    }

    fn from_ordered(phones: Vec<Phone>) -> Self {
        let lookup = phones
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), PhoneId(i as u32)))
            .collect();
        PhoneInventory { phones, lookup }
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn eos(&self) -> PhoneId {
        PhoneId(0)
    }

    pub fn id(&self, phone: &Phone) -> Option<PhoneId> {
        self.lookup.get(phone).copied()
    }

    pub fn phone(&self, id: PhoneId) -> &Phone {
        &self.phones[id.index()]
    }

    pub fn phones(&self) -> &[Phone] {
        &self.phones
    }

    /// Map a phone sequence to ids, failing on out-of-inventory phones.
    pub fn encode(&self, phones: &[Phone]) -> Result<Vec<PhoneId>> {
        phones
            .iter()
            .map(|p| self.id(p).ok_or_else(|| LexiconError::UnknownPhone(p.0.clone())))
            .collect()
    }

    pub fn render(&self, form: &[PhoneId]) -> String {
        form.iter().map(|&id| self.phone(id).as_str()).collect()
    }
}

/// A word: orthographic key, phone string, meaning vector and word class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sign {
    pub lemma: String,
    pub form: Vec<PhoneId>,
    /// Empty until meanings are attached.
    pub meaning: Vec<f64>,
    pub pos: String,
    pub concept_id: Option<String>,
}

/// All signs of one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub language: String,
    pub inventory: PhoneInventory,
    pub signs: Vec<Sign>,
    /// Sorted word-class labels.
    pub classes: Vec<String>,
}

impl Lexicon {
    /// Assemble a lexicon, checking its invariants.
    pub fn new(language: impl Into<String>, inventory: PhoneInventory, signs: Vec<Sign>) -> Result<Self> {
        if signs.is_empty() {
            return Err(LexiconError::EmptyLexicon);
        }
        let eos = inventory.eos();
        for s in &signs {
            if s.form.is_empty() {
                return Err(LexiconError::EmptyForm);
            }
            if let Some(bad) = s.form.iter().find(|&&p| p == eos || p.index() >= inventory.len()) {
                return Err(LexiconError::UnknownPhone(format!("#{}", bad.0)));
            }
        }
        let dim = signs[0].meaning.len();
        if let Some(s) = signs.iter().find(|s| s.meaning.len() != dim) {
            return Err(LexiconError::InconsistentMeaning(dim, s.meaning.len()));
        }
        let classes: BTreeSet<String> = signs.iter().map(|s| s.pos.clone()).collect();
        Ok(Lexicon {
            language: language.into(),
            inventory,
            signs,
            classes: classes.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    /// Dimension of the attached meaning vectors (0 if none).
    pub fn meaning_dim(&self) -> usize {
        self.signs.first().map_or(0, |s| s.meaning.len())
    }

    pub fn class_index(&self, pos: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(pos)).ok()
    }

    pub fn form_string(&self, i: usize) -> String {
        self.inventory.render(&self.signs[i].form)
    }

    /// Keep only the signs at `indices` (in that order). Inventory and
    /// class set are preserved so ids stay valid.
    pub fn subset(&self, indices: &[usize]) -> Lexicon {
        Lexicon {
            language: self.language.clone(),
            inventory: self.inventory.clone(),
            signs: indices.iter().map(|&i| self.signs[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }

    /// Write the canonical four-column TSV (`lemma`, `ipa`, `pos`, `concept`),
    /// phones separated by spaces.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "lemma\tipa\tpos\tconcept")?;
        for s in &self.signs {
            let form: Vec<&str> = s.form.iter().map(|&p| self.inventory.phone(p).as_str()).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                s.lemma,
                form.join(" "),
                s.pos,
                s.concept_id.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }

    /// Write meaning vectors in word-vector text format keyed by lemma.
    pub fn write_embeddings<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.meaning_dim())?;
        for s in &self.signs {
            write!(out, "{}", s.lemma)?;
            for x in &s.meaning {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tokenization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    /// Raw IPA: base characters with attached modifiers, tie bars join.
    #[default]
    Raw,
    /// Phones already separated by whitespace.
    PreTokenized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizeOptions {
    pub mode: TokenizeMode,
    /// Remove stress and syllable-boundary marks before tokenizing.
    pub strip_prosodic_marks: bool,
}

const TIE_BARS: [char; 2] = ['\u{0361}', '\u{035C}'];
const PROSODIC_MARKS: [char; 6] = ['ˈ', 'ˌ', '.', '‿', '|', '‖'];

fn is_combining(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

fn is_modifier_letter(c: char) -> bool {
    // stress marks stand alone
    if c == 'ˈ' || c == 'ˌ' {
        return false;
    }
    matches!(c as u32,
        0x02B0..=0x02FF | 0x1D2C..=0x1D6A | 0x1D9B..=0x1DBF | 0x2071 | 0x207F | 0x2090..=0x209C)
}

/// Split a raw IPA string into phones. The input is NFC-normalized first;
/// concatenating the returned symbols reproduces the normalized input.
pub fn tokenize_ipa(raw: &str) -> Result<Vec<Phone>> {
    tokenize_with(raw, TokenizeOptions::default())
}

pub fn tokenize_with(raw: &str, opts: TokenizeOptions) -> Result<Vec<Phone>> {
    let mut norm: String = raw.nfc().collect();
    if opts.strip_prosodic_marks {
        norm.retain(|c| !PROSODIC_MARKS.contains(&c));
    }
    match opts.mode {
        TokenizeMode::PreTokenized => {
            let phones: Vec<Phone> = norm.split_whitespace().map(Phone::new).collect();
            if phones.is_empty() {
                return Err(LexiconError::EmptyForm);
            }
            if let Some(p) = phones.iter().find(|p| p.0.chars().next().is_some_and(is_combining)) {
                return Err(LexiconError::LeadingCombiningMark(p.0.clone()));
            }
            Ok(phones)
        }
        TokenizeMode::Raw => split_raw(&norm),
    }
}

fn split_raw(norm: &str) -> Result<Vec<Phone>> {
    if norm.is_empty() {
        return Err(LexiconError::EmptyForm);
    }
    let mut phones: Vec<String> = Vec::new();
    let mut join_next = false;
    for c in norm.chars() {
        if c.is_whitespace() {
            return Err(LexiconError::Whitespace(norm.to_string()));
        }
        if is_combining(c) || is_modifier_letter(c) {
            match phones.last_mut() {
                Some(last) => last.push(c),
                None if is_combining(c) => {
                    return Err(LexiconError::LeadingCombiningMark(norm.to_string()))
                }
                None => phones.push(c.to_string()),
            }
            if TIE_BARS.contains(&c) {
                join_next = true;
            }
        } else if join_next && !phones.is_empty() {
            phones.last_mut().unwrap().push(c);
            join_next = false;
        } else {
            phones.push(c.to_string());
        }
    }
    Ok(phones.into_iter().map(Phone).collect())
}

// ---------------------------------------------------------------------------
// TSV lexica

/// Column names for the lexicon TSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub lemma: String,
    pub form: String,
    pub pos: String,
    pub concept: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            lemma: "lemma".into(),
            form: "ipa".into(),
            pos: "pos".into(),
            concept: Some("concept".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based line number in the source.
    pub line: usize,
    pub form: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub skipped: Vec<SkippedRow>,
    pub duplicates: usize,
}

/// Parse a lexicon TSV. Rows whose form fails to tokenize are skipped and
/// reported; duplicate `(lemma, form, pos)` rows keep the first occurrence.
pub fn parse_lexicon<R: Read>(
    language: &str,
    stream: R,
    schema: &ColumnSchema,
    opts: TokenizeOptions,
) -> Result<(Lexicon, ParseReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(stream);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| LexiconError::MissingColumn(name.to_string()))
    };
    let lemma_col = col(&schema.lemma)?;
    let form_col = col(&schema.form)?;
    let pos_col = col(&schema.pos)?;
    // an absent optional concept column is not an error
    let concept_col = schema.concept.as_deref().and_then(|c| col(c).ok());

    let mut report = ParseReport::default();
    let mut seen: HashSet<(String, Vec<Phone>, String)> = HashSet::new();
    let mut rows: Vec<(String, Vec<Phone>, String, Option<String>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let field = |c: usize| record.get(c).unwrap_or("").trim().to_string();
        let form_raw = field(form_col);
        let phones = match tokenize_with(&form_raw, opts) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("line {line}: skipping form {form_raw:?}: {e}");
                report.skipped.push(SkippedRow { line, form: form_raw, reason: e.to_string() });
                continue;
            }
        };
        let lemma = field(lemma_col);
        let pos = field(pos_col);
        if !seen.insert((lemma.clone(), phones.clone(), pos.clone())) {
            report.duplicates += 1;
            continue;
        }
        let concept = concept_col.map(field).filter(|c| !c.is_empty());
        rows.push((lemma, phones, pos, concept));
    }
    if report.duplicates > 0 {
        log::info!("{language}: dropped {} duplicate rows", report.duplicates);
    }
    if rows.is_empty() {
        return Err(LexiconError::EmptyLexicon);
    }
    let inventory = PhoneInventory::new(rows.iter().flat_map(|r| r.1.iter().cloned()));
    let signs = rows
        .into_iter()
        .map(|(lemma, phones, pos, concept_id)| {
            Ok(Sign { lemma, form: inventory.encode(&phones)?, meaning: Vec::new(), pos, concept_id })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Lexicon::new(language, inventory, signs)?, report))
}

// ---------------------------------------------------------------------------
// Embeddings

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embeddings {
    pub vectors: HashMap<String, Vec<f64>>,
    /// Wanted lemmata with no vector, sorted.
    pub misses: Vec<String>,
    pub dim: usize,
}

/// Load word vectors for the wanted lemmata from word-vector text format.
/// An optional `count dim` header line is honoured.
pub fn load_embeddings<R: BufRead>(stream: R, wanted: &HashSet<String>) -> Result<Embeddings> {
    let mut dim: Option<usize> = None;
    let mut vectors = HashMap::new();
    for (i, line) in stream.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        match dim {
            Some(d) if d != rest.len() => {
                return Err(LexiconError::DimensionMismatch { line: lineno, expected: d, found: rest.len() })
            }
            None => dim = Some(rest.len()),
            _ => {}
        }
        let values = rest
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| LexiconError::NonNumeric { line: lineno, field: f.to_string() })
            })
            .collect::<Result<Vec<f64>>>()?;
        if wanted.contains(token) {
            vectors.entry(token.to_string()).or_insert(values);
        }
    }
    let mut misses: Vec<String> = wanted.iter().filter(|w| !vectors.contains_key(*w)).cloned().collect();
    misses.sort();
    Ok(Embeddings { vectors, misses, dim: dim.unwrap_or(0) })
}

/// Attach meaning vectors by lemma, dropping signs without one. Returns the
/// new lexicon and the dropped lemmata.
pub fn attach_meanings(lex: &Lexicon, emb: &Embeddings) -> Result<(Lexicon, Vec<String>)> {
    let mut dropped = Vec::new();
    let mut signs = Vec::with_capacity(lex.len());
    for s in &lex.signs {
        match emb.vectors.get(&s.lemma) {
            Some(v) => signs.push(Sign { meaning: v.clone(), ..s.clone() }),
            None => dropped.push(s.lemma.clone()),
        }
    }
    let mut out = Lexicon::new(lex.language.clone(), lex.inventory.clone(), signs)?;
    out.classes = lex.classes.clone();
    Ok((out, dropped))
}

/// Convenience: the set of lemmata of a lexicon.
pub fn lemma_set(lex: &Lexicon) -> HashSet<String> {
    lex.signs.iter().map(|s| s.lemma.clone()).collect()
}

// ---------------------------------------------------------------------------
// Folds

/// Fold membership for each sign, a pure function of `(len, k, seed)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

/// Fold roles for one rotation: validation and test folds, the rest train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldRoles {
    pub validation: usize,
    pub test: usize,
}

/// Shuffle sign indices with `seed`, then deal them round-robin into `k` folds.
pub fn split_folds(lex: &Lexicon, k: usize, seed: u64) -> Result<FoldAssignment> {
    split_indices(lex.len(), k, seed)
}

pub fn split_indices(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(LexiconError::TooFewFolds(k));
    }
    if k > n {
        return Err(LexiconError::TooManyFolds { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, rng::stream::FOLDS, 0));
    let mut fold_of = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

impl FoldAssignment {
    /// Roles under rotation `r`: fold `r` validates, fold `r+1` tests.
    pub fn roles(&self, rotation: usize) -> FoldRoles {
        FoldRoles { validation: rotation % self.k, test: (rotation + 1) % self.k }
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train(&self, roles: FoldRoles) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != roles.validation && self.fold_of[i] != roles.test)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn syms(p: &[Phone]) -> Vec<&str> {
        p.iter().map(|x| x.as_str()).collect()
    }

    #[test]
    fn plain_ascii_is_one_phone_per_char() {
        assert_eq!(syms(&tokenize_ipa("kat").unwrap()), ["k", "a", "t"]);
    }

    #[test]
    fn modifiers_attach_to_preceding_base() {
        assert_eq!(syms(&tokenize_ipa("tʰam").unwrap()), ["tʰ", "a", "m"]);
        assert_eq!(syms(&tokenize_ipa("aːkʲʷ").unwrap()), ["aː", "kʲʷ"]);
        // combining marks without a precomposed form stay attached
        assert_eq!(syms(&tokenize_ipa("bn\u{0329}a\u{0330}").unwrap()), ["b", "n\u{0329}", "a\u{0330}"]);
        assert_eq!(syms(&tokenize_ipa("ba\u{0303}").unwrap()), ["b", "\u{e3}"]);
    }

    #[test]
    fn tie_bar_joins_flanking_bases() {
        assert_eq!(syms(&tokenize_ipa("t\u{0361}ʃa").unwrap()), ["t\u{0361}ʃ", "a"]);
        assert_eq!(syms(&tokenize_ipa("k\u{035C}pʰo").unwrap()), ["k\u{035C}pʰ", "o"]);
    }

    #[test]
    fn empty_and_leading_combining_fail() {
        assert!(matches!(tokenize_ipa(""), Err(LexiconError::EmptyForm)));
        assert!(matches!(tokenize_ipa("\u{0303}a"), Err(LexiconError::LeadingCombiningMark(_))));
        assert!(matches!(tokenize_ipa("a b"), Err(LexiconError::Whitespace(_))));
    }

    #[test]
    fn nfc_is_applied() {
        // e + combining acute composes to é
        let p = tokenize_ipa("e\u{0301}t").unwrap();
        assert_eq!(syms(&p), ["é", "t"]);
    }

    #[test]
    fn pretokenized_mode_splits_on_spaces() {
        let opts = TokenizeOptions { mode: TokenizeMode::PreTokenized, ..Default::default() };
        assert_eq!(syms(&tokenize_with("ts a ŋ", opts).unwrap()), ["ts", "a", "ŋ"]);
        assert!(tokenize_with("   ", opts).is_err());
    }

    #[test]
    fn prosodic_marks_can_be_stripped() {
        let opts = TokenizeOptions { strip_prosodic_marks: true, ..Default::default() };
        assert_eq!(syms(&tokenize_with("ˈka.ta", opts).unwrap()), ["k", "a", "t", "a"]);
        assert_eq!(syms(&tokenize_ipa("ˈka").unwrap()), ["ˈ", "k", "a"]);
    }

    const TSV: &str = "lemma\tipa\tpos\tconcept\ncat\tkat\tN\tC1\ncame\tkam\tV\t\ntook\ttok\tV\tC3\n";

    #[test]
    fn parses_well_formed_rows() {
        let (lex, rep) = parse_lexicon("eng", TSV.as_bytes(), &ColumnSchema::default(), Default::default()).unwrap();
        assert_eq!(lex.len(), 3);
        let inv: Vec<&str> = lex.inventory.phones().iter().map(|p| p.as_str()).collect();
        assert_eq!(inv, [EOS_SYMBOL, "a", "k", "m", "o", "t"]);
        assert_eq!(lex.classes, ["N", "V"]);
        assert_eq!(lex.signs[1].concept_id, None);
        assert_eq!(lex.signs[0].concept_id.as_deref(), Some("C1"));
        assert_eq!(rep, ParseReport::default());
    }

    #[test]
    fn header_only_is_empty_lexicon() {
        let r = parse_lexicon("x", "lemma\tipa\tpos\n".as_bytes(), &ColumnSchema::default(), Default::default());
        assert!(matches!(r, Err(LexiconError::EmptyLexicon)));
    }

    #[test]
    fn missing_column_is_reported() {
        let r = parse_lexicon("x", "lemma\tform\tpos\na\tb\tc\n".as_bytes(), &ColumnSchema::default(), Default::default());
        assert!(matches!(r, Err(LexiconError::MissingColumn(c)) if c == "ipa"));
    }

    #[test]
    fn duplicates_and_bad_forms_are_dropped() {
        let tsv = "lemma\tipa\tpos\ncat\tkat\tN\ncat\tkat\tN\nbad\t\u{0301}x\tN\nempty\t\tN\n";
        let (lex, rep) = parse_lexicon("x", tsv.as_bytes(), &ColumnSchema::default(), Default::default()).unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(rep.duplicates, 1);
        assert_eq!(rep.skipped.len(), 2);
        assert_eq!(rep.skipped[0].line, 4);
    }

    fn wanted(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn embeddings_with_header() {
        let text = "2 3\ncat 0.1 0.2 0.3\ndog -1 2.5e-1 3\n";
        let e = load_embeddings(text.as_bytes(), &wanted(&["cat", "dog"])).unwrap();
        assert_eq!(e.vectors.len(), 2);
        assert!(e.misses.is_empty());
        assert_eq!(e.dim, 3);
        assert_eq!(e.vectors["dog"], vec![-1.0, 0.25, 3.0]);
    }

    #[test]
    fn embeddings_report_misses() {
        let text = "cat 0.1 0.2\n";
        let e = load_embeddings(text.as_bytes(), &wanted(&["cat", "emu"])).unwrap();
        assert_eq!(e.misses, ["emu"]);
        assert!(!e.vectors.contains_key("emu"));
    }

    #[test]
    fn embeddings_dimension_and_number_errors() {
        let text = "2 3\ncat 0.1 0.2\n";
        assert!(matches!(
            load_embeddings(text.as_bytes(), &wanted(&["cat"])),
            Err(LexiconError::DimensionMismatch { line: 2, expected: 3, found: 2 })
        ));
        let text = "cat 0.1 zz\n";
        assert!(matches!(load_embeddings(text.as_bytes(), &wanted(&[])), Err(LexiconError::NonNumeric { .. })));
    }

    #[test]
    fn attach_drops_signs_without_vectors() {
        let (lex, _) = parse_lexicon("eng", TSV.as_bytes(), &ColumnSchema::default(), Default::default()).unwrap();
        let e = load_embeddings("cat 1 2\ntook 3 4\n".as_bytes(), &lemma_set(&lex)).unwrap();
        let (lex2, dropped) = attach_meanings(&lex, &e).unwrap();
        assert_eq!(lex2.len(), 2);
        assert_eq!(dropped, ["came"]);
        assert_eq!(lex2.meaning_dim(), 2);
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let a = split_indices(20, 10, 5).unwrap();
        assert!(a.sizes().iter().all(|&s| s == 2));
        assert_eq!(a, split_indices(20, 10, 5).unwrap());
        assert_ne!(a.fold_of, split_indices(20, 10, 6).unwrap().fold_of);
        assert!(matches!(split_indices(20, 30, 5), Err(LexiconError::TooManyFolds { k: 30, n: 20 })));
        assert!(matches!(split_indices(20, 1, 5), Err(LexiconError::TooFewFolds(1))));
    }

    #[test]
    fn fold_roles_rotate() {
        let a = split_indices(30, 10, 1).unwrap();
        let r = a.roles(9);
        assert_eq!((r.validation, r.test), (9, 0));
        assert_eq!(a.train(a.roles(0)).len(), 24);
    }

    proptest! {
        #[test]
        fn tokenization_round_trips(s in "[a-zɪʃŋθ]{1,3}[ʰʲːˑ\u{0303}\u{0325}]{0,2}[a-z]{0,4}") {
            let norm: String = s.nfc().collect();
            let phones = tokenize_ipa(&s).unwrap();
            let joined: String = phones.iter().map(|p| p.as_str()).collect();
            prop_assert_eq!(joined, norm);
            prop_assert!(phones.iter().all(|p| !p.as_str().is_empty() && !p.as_str().contains(char::is_whitespace)));
        }

        #[test]
        fn folds_partition(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let a = split_indices(n, k, seed).unwrap();
            let sizes = a.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
