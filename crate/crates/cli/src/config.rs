//! Run configuration: one versioned JSON document per run.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signform_core::hyperopt::{SearchOptions, SearchSpace};
use signform_core::infotheory::DeltaMode;
use signform_core::lexicon::{ColumnSchema, TokenizeOptions};
use signform_core::phonesthemes::MineOptions;
use signform_core::phonolm::{Conditioning, LmConfig, TrainOptions};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "SIGNFORM_SEED";
pub const THREADS_ENV: &str = "SIGNFORM_THREADS";

/// Hyperparameters the search may vary.
pub const TUNABLE: [&str; 5] = ["layers", "hidden_size", "phone_embed_size", "pca_d", "dropout"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSource {
    /// Language code; also names the output files.
    pub name: String,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldOptions {
    pub k: usize,
    /// Rotate the validation/test roles through every fold so that each word
    /// is tested once. Otherwise only fold 1 is tested.
    pub rotate: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        FoldOptions { k: 10, rotate: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperoptConfig {
    pub search: SearchOptions,
    pub space: SearchSpace,
    /// Values of the hyperparameters not in the search space.
    pub base: LmConfig,
}

/// Which signs the PCA axes are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaFit {
    #[default]
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub languages: Vec<LanguageSource>,
    pub output_dir: PathBuf,
    pub schema: ColumnSchema,
    pub tokenize: TokenizeOptions,
    pub folds: FoldOptions,
    pub seed: u64,
    pub model_kinds: Vec<Conditioning>,
    /// Fixed model configuration; when absent every model kind is tuned.
    pub lm: Option<LmConfig>,
    pub hyperopt: HyperoptConfig,
    pub train: TrainOptions,
    pub pca_fit: PcaFit,
    pub permutations: usize,
    pub delta_mode: DeltaMode,
    /// Level of the Benjamini–Hochberg correction across languages.
    pub alpha: f64,
    pub phonesthemes: MineOptions,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            languages: Vec::new(),
            output_dir: PathBuf::from("out"),
            schema: ColumnSchema::default(),
            tokenize: TokenizeOptions::default(),
            folds: FoldOptions::default(),
            seed: 0,
            model_kinds: Conditioning::ALL.to_vec(),
            lm: None,
            hyperopt: HyperoptConfig::default(),
            train: TrainOptions::default(),
            pca_fit: PcaFit::Train,
            permutations: 100_000,
            delta_mode: DeltaMode::PerPhone,
            alpha: 0.05,
            phonesthemes: MineOptions::default(),
            threads: 0,
        }
    }
}

/// Command-line values that take precedence over the environment and the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Read a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for lang in &mut cfg.languages {
            rebase(&mut lang.lexicon);
            if let Some(e) = lang.embeddings.as_mut() {
                rebase(e);
            }
        }
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    /// Apply overrides: flag, then environment, then the file value.
    pub fn apply(&mut self, flags: &Overrides, env: impl Fn(&str) -> Option<String>) -> Result<()> {
        let parsed = |name: &str| -> Result<Option<u64>> {
            env(name)
                .map(|v| v.trim().parse::<u64>().map_err(|_| CliError::Config(format!("{name}={v:?} is not an integer"))))
                .transpose()
        };
        if let Some(s) = flags.seed.or(parsed(SEED_ENV)?) {
            self.seed = s;
        }
        if let Some(t) = flags.threads.or(parsed(THREADS_ENV)?.map(|t| t as usize)) {
            self.threads = t;
        }
        if let Some(o) = &flags.output_dir {
            self.output_dir = o.clone();
        }
        Ok(())
    }

    pub fn has_kind(&self, kind: Conditioning) -> bool {
        self.model_kinds.contains(&kind)
    }

    /// Model kinds in canonical order.
    pub fn kinds(&self) -> Vec<Conditioning> {
        Conditioning::ALL.into_iter().filter(|k| self.has_kind(*k)).collect()
    }

    pub fn needs_meaning(&self) -> bool {
        self.model_kinds.iter().any(|k| k.uses_meaning())
    }

    /// Check everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let mut seen = HashSet::new();
        if let Some(k) = self.model_kinds.iter().find(|k| !seen.insert(**k)) {
            return fail(format!("model kind {k} listed twice"));
        }
        if !self.has_kind(Conditioning::Nothing) {
            return fail("the uncond model is required (it gives H(W))".into());
        }
        if self.has_kind(Conditioning::Class) != self.has_kind(Conditioning::MeaningAndClass) {
            return fail("MI given POS needs both the class and meaning_and_class models".into());
        }
        if self.languages.is_empty() {
            return fail("no languages configured".into());
        }
        let mut names = HashSet::new();
        for lang in &self.languages {
            let ok = !lang.name.is_empty()
                && lang.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return fail(format!("language name {:?} must be non-empty ASCII letters, digits, '_' or '-'", lang.name));
            }
            if !names.insert(&lang.name) {
                return fail(format!("language {} configured twice", lang.name));
            }
            if !lang.lexicon.is_file() {
                return fail(format!("{}: lexicon {} does not exist", lang.name, lang.lexicon.display()));
            }
            match &lang.embeddings {
                Some(e) if !e.is_file() => {
                    return fail(format!("{}: embeddings {} do not exist", lang.name, e.display()));
                }
                None if self.needs_meaning() => {
                    return fail(format!("{}: meaning-conditioned models need an embeddings file", lang.name));
                }
                _ => {}
            }
        }
        if self.folds.k < 3 {
            return fail(format!("fold count {} leaves no training fold (need k >= 3)", self.folds.k));
        }
        if self.permutations == 0 {
            return fail("permutations must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha {} outside (0, 1)", self.alpha));
        }
        match &self.lm {
            Some(lm) => lm.validate()?,
            None => {
                self.hyperopt.space.validate()?;
                if self.hyperopt.search.budget == 0 {
                    return fail("hyperopt budget must be at least 1".into());
                }
                if let Some(d) = self.hyperopt.space.dims.iter().find(|d| !TUNABLE.contains(&d.name.as_str())) {
                    return fail(format!("cannot tune {:?}; tunable: {}", d.name, TUNABLE.join(", ")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!(c.folds.k, 10);
        assert_eq!(c.permutations, 100_000);
        assert_eq!(c.hyperopt.search.budget, 50);
        assert_eq!(c.model_kinds.len(), 4);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"version": 1, "sede": 3}"#).is_err());
        let c = RunConfig::from_json(r#"{"version": 1, "seed": 3, "model_kinds": ["uncond"]}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model_kinds, [Conditioning::Nothing]);
    }

    #[test]
    fn flag_beats_env_beats_file() {
        let mut c = RunConfig { seed: 1, threads: 2, ..Default::default() };
        let env = |k: &str| match k {
            SEED_ENV => Some("5".to_string()),
            THREADS_ENV => Some("3".to_string()),
            _ => None,
        };
        c.apply(&Overrides::default(), env).unwrap();
        assert_eq!((c.seed, c.threads), (5, 3));
        c.apply(&Overrides { seed: Some(9), ..Default::default() }, env).unwrap();
        assert_eq!((c.seed, c.threads), (9, 3));
        assert!(c.apply(&Overrides::default(), |_| Some("x".into())).is_err());
    }

    #[test]
    fn prerequisites_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let lex = dir.path().join("x.tsv");
        std::fs::write(&lex, "lemma\tipa\tpos\n").unwrap();
        let base = RunConfig {
            languages: vec![LanguageSource { name: "xx".into(), lexicon: lex, embeddings: None }],
            model_kinds: vec![Conditioning::Nothing],
            ..Default::default()
        };
        assert!(base.validate().is_ok());
        let msg = |c: RunConfig| c.validate().unwrap_err().to_string();
        assert!(msg(RunConfig { model_kinds: vec![Conditioning::Meaning], ..base.clone() }).contains("uncond"));
        assert!(msg(RunConfig { model_kinds: vec![Conditioning::Nothing, Conditioning::Meaning], ..base.clone() })
            .contains("embeddings"));
        assert!(msg(RunConfig { model_kinds: vec![Conditioning::Nothing, Conditioning::Class], ..base.clone() })
            .contains("meaning_and_class"));
        let mut missing = base.clone();
        missing.languages[0].lexicon = dir.path().join("nope.tsv");
        assert!(msg(missing).contains("does not exist"));
        assert!(msg(RunConfig { folds: FoldOptions { k: 2, rotate: false }, ..base }).contains("k >= 3"));
    }
}
