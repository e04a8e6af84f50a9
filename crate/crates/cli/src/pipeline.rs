//! Per-language pipeline: folds, PCA, hyperparameter search, final training,
//! test-fold evaluation and the MI report.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signform_core::hyperopt::{self, Evaluation, SearchSpace, Trial};
use signform_core::infotheory::{MiReport, ModelLosses, PerWordLoss};
use signform_core::lexicon::{self, FoldAssignment, Lexicon};
use signform_core::phonolm::{self, Conditioning, LmConfig, LmError, ModelArchive, TrainOutcome};
use signform_core::rng::{self, stream};
use signform_core::semspace::{self, PcaModel};
use signform_core::Execution;

use crate::config::{LanguageSource, PcaFit, RunConfig};
use crate::error::{CliError, Result};

/// Seed of everything belonging to one language: depends on the run seed
/// and the language name only, never on the other languages in the batch.
pub fn language_seed(seed: u64, name: &str) -> u64 {
    rng::derive(seed, stream::RUN, rng::fnv1a(name.bytes().map(u64::from)))
}

fn kind_index(kind: Conditioning) -> u64 {
    Conditioning::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSeeds {
    pub language: u64,
    pub folds: u64,
    /// Initialisation / shuffling seed per rotation, shared by all model kinds.
    pub train: Vec<u64>,
    pub hyperopt: BTreeMap<String, u64>,
    pub permutation: u64,
    pub phonesthemes: u64,
}

impl LanguageSeeds {
    pub fn new(run_seed: u64, name: &str, k: usize) -> Self {
        let language = language_seed(run_seed, name);
        LanguageSeeds {
            language,
            folds: rng::derive(language, stream::FOLDS, 0),
            train: (0..k as u64).map(|r| rng::derive(language, stream::INIT, r)).collect(),
            hyperopt: Conditioning::ALL
                .iter()
                .map(|&c| (c.name().to_string(), rng::derive(language, stream::HYPEROPT, kind_index(c))))
                .collect(),
            permutation: rng::derive(language, stream::PERMUTATION, 0),
            phonesthemes: rng::derive(language, stream::PHONESTHEME, 0),
        }
    }
}

/// What happened while reading a language's files.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadStats {
    pub rows_kept: usize,
    pub rows_skipped: usize,
    pub duplicates: usize,
    pub missing_embeddings: usize,
    pub signs: usize,
    pub inventory_size: usize,
    pub classes: usize,
    pub meaning_dim: usize,
}

pub fn load_language(src: &LanguageSource, cfg: &RunConfig) -> Result<(Lexicon, LoadStats)> {
    let file = File::open(&src.lexicon).map_err(|e| CliError::io(&src.lexicon, e))?;
    let (lex, report) = lexicon::parse_lexicon(&src.name, BufReader::new(file), &cfg.schema, cfg.tokenize)?;
    for row in report.skipped.iter().take(10) {
        log::warn!("{}: line {} skipped ({}): {:?}", src.name, row.line, row.reason, row.form);
    }
    if report.duplicates > 0 {
        log::info!("{}: {} duplicate rows dropped", src.name, report.duplicates);
    }
    let mut stats = LoadStats {
        rows_kept: lex.len(),
        rows_skipped: report.skipped.len(),
        duplicates: report.duplicates,
        ..Default::default()
    };
    let lex = match &src.embeddings {
        Some(path) if cfg.needs_meaning() => {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let emb = lexicon::load_embeddings(BufReader::new(f), &lexicon::lemma_set(&lex))?;
            let (with, dropped) = lexicon::attach_meanings(&lex, &emb)?;
            if !dropped.is_empty() {
                log::info!("{}: {} signs without embeddings dropped", src.name, dropped.len());
            }
            stats.missing_embeddings = dropped.len();
            with
        }
        _ => lex,
    };
    stats.signs = lex.len();
    stats.inventory_size = lex.inventory.len();
    stats.classes = lex.classes.len();
    stats.meaning_dim = lex.meaning_dim();
    Ok((lex, stats))
}

/// Sign indices used for training, early stopping and testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn from_folds(folds: &FoldAssignment, rotation: usize) -> Self {
        let roles = folds.roles(rotation);
        Split { train: folds.train(roles), valid: folds.members(roles.validation), test: folds.members(roles.test) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub trials: usize,
    pub resumed: usize,
    pub best_index: usize,
    pub best_objective: f64,
    pub best_point: Vec<f64>,
    pub dims: Vec<String>,
    /// Search log, relative to the output directory.
    pub log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSummary {
    pub rotation: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub valid_bits_per_phone: f64,
    pub test_bits_per_phone: f64,
    pub test_words: usize,
    pub param_hash: String,
    /// Model archive, relative to the output directory.
    pub archive: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kind: Conditioning,
    pub config: LmConfig,
    pub search: Option<SearchSummary>,
    pub rotations: Vec<RotationSummary>,
}

/// A trained model kind and its out-of-sample losses.
#[derive(Debug, Clone)]
pub struct KindFit {
    pub summary: ModelSummary,
    pub test_losses: PerWordLoss,
}

struct Fold {
    rotation: usize,
    split: Split,
    pca: Option<PcaModel>,
}

/// Trains every configured model kind on one lexicon.
pub struct Trainer<'a> {
    pub cfg: &'a RunConfig,
    pub lexicon: &'a Lexicon,
    /// Prefix of archive and search-log names, e.g. `eng` or `eng.rev`.
    pub tag: String,
    pub seeds: &'a LanguageSeeds,
    /// Where archives and search logs go; nothing is written when absent.
    pub out: Option<&'a Path>,
    pub exec: Execution,
}

impl Trainer<'_> {
    fn max_pca_d(&self) -> usize {
        match &self.cfg.lm {
            Some(lm) => lm.pca_d,
            None => {
                let space = &self.cfg.hyperopt.space;
                space.index_of("pca_d").map_or(self.cfg.hyperopt.base.pca_d, |i| space.dims[i].upper.round() as usize)
            }
        }
    }

    fn folds(&self, folds: &FoldAssignment, rotations: &[usize], kinds: &[Conditioning]) -> Result<Vec<Fold>> {
        let needs_pca = kinds.iter().any(|k| k.uses_meaning());
        rotations
            .iter()
            .map(|&rotation| {
                let split = Split::from_folds(folds, rotation);
                let pca = if needs_pca {
                    let rows: Vec<Vec<f64>> = match self.cfg.pca_fit {
                        PcaFit::Train => split.train.iter().map(|&i| self.lexicon.signs[i].meaning.clone()).collect(),
                        PcaFit::All => self.lexicon.signs.iter().map(|s| s.meaning.clone()).collect(),
                    };
                    let d = self.max_pca_d().min(self.lexicon.meaning_dim()).min(rows.len()).max(1);
                    Some(semspace::pca_fit(&rows, d)?)
                } else {
                    None
                };
                Ok(Fold { rotation, split, pca })
            })
            .collect()
    }

    /// The configuration actually trained: conditioning set to `kind`, PCA
    /// size limited to the available axes, hidden size even when it is split
    /// between meaning and class.
    pub fn configure(&self, mut lm: LmConfig, kind: Conditioning, pca: Option<&PcaModel>) -> LmConfig {
        lm.condition_on = kind;
        if let Some(p) = pca.filter(|_| kind.uses_meaning()) {
            lm.pca_d = lm.pca_d.clamp(1, p.output_dim());
        }
        if kind == Conditioning::MeaningAndClass && lm.hidden_size % 2 == 1 {
            lm.hidden_size += 1;
        }
        lm
    }

    fn train_one(&self, lm: &LmConfig, fold: &Fold, seed: u64) -> Result<(TrainOutcome, Option<PcaModel>)> {
        let pca = match (&fold.pca, lm.condition_on.uses_meaning()) {
            (Some(p), true) => Some(p.truncate(lm.pca_d)?),
            _ => None,
        };
        let train = phonolm::examples_for(self.lexicon, &fold.split.train, lm, pca.as_ref())?;
        let valid = phonolm::examples_for(self.lexicon, &fold.split.valid, lm, pca.as_ref())?;
        let outcome = phonolm::train_with(
            &train,
            &valid,
            lm,
            self.lexicon.inventory.len(),
            self.lexicon.classes.len(),
            &self.cfg.train,
            seed,
            self.exec,
        )?;
        Ok((outcome, pca))
    }

    fn search_log_path(&self, kind: Conditioning) -> Option<(PathBuf, String)> {
        let rel = format!("search/{}/{}/search.jsonl", self.tag, kind.name());
        self.out.map(|o| (o.join(&rel), rel))
    }

    /// Bayesian search on the first fold; returns the best configuration and,
    /// when it was trained in this process, its outcome.
    fn tune(&self, kind: Conditioning, fold: &Fold) -> Result<(LmConfig, Option<SearchSummary>, Option<TrainOutcome>)> {
        let hcfg = &self.cfg.hyperopt;
        let mut space: SearchSpace = hcfg.space.clone();
        if !kind.uses_meaning() {
            space.dims.retain(|d| d.name != "pca_d");
        }
        let base = self.configure(hcfg.base.clone(), kind, fold.pca.as_ref());
        if space.is_empty() {
            return Ok((base, None, None));
        }
        let point = |native: &[f64]| self.configure(apply_point(&hcfg.base, &space, native), kind, fold.pca.as_ref());

        let log_path = self.search_log_path(kind);
        let mut history: Vec<Trial> = Vec::new();
        let mut writer = None;
        if let Some((path, _)) = &log_path {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            if path.exists() {
                let f = File::open(path).map_err(|e| CliError::io(path, e))?;
                history = hyperopt::read_log(BufReader::new(f))?;
                history.truncate(hcfg.search.budget);
                log::info!("{} {kind}: resuming search with {} logged trials", self.tag, history.len());
            }
            writer = Some(OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?);
        }
        let resumed = history.len();
        let train_seed = self.seeds.train[fold.rotation];
        let mut best: Option<(f64, usize, TrainOutcome)> = None;
        let mut trial = resumed;
        let objective = |native: &[f64]| -> std::result::Result<Evaluation, String> {
            let lm = point(native);
            let index = trial;
            trial += 1;
            match self.train_one(&lm, fold, train_seed) {
                Ok((out, _)) => {
                    let v = out.best_valid_bpp;
                    if best.as_ref().is_none_or(|b| v < b.0) {
                        best = Some((v, index, out));
                    }
                    Ok(Evaluation::Ok(v))
                }
                Err(CliError::Lm(LmError::Diverged { .. })) => Ok(Evaluation::Diverged),
                Err(e) => Err(e.to_string()),
            }
        };
        let seed = self.seeds.hyperopt[kind.name()];
        let log_writer = writer.as_mut().map(|w| w as &mut dyn Write);
        let result = hyperopt::run_search(objective, &space, &hcfg.search, seed, history, log_writer)?;
        let lm = point(&result.best.native);
        let summary = SearchSummary {
            trials: result.history.len(),
            resumed,
            best_index: result.best.index,
            best_objective: result.best.objective,
            best_point: result.best.native.clone(),
            dims: space.dims.iter().map(|d| d.name.clone()).collect(),
            log: log_path.map(|(_, rel)| rel),
        };
        let cached = best.filter(|b| b.1 == result.best.index).map(|b| b.2);
        Ok((lm, Some(summary), cached))
    }

    fn fit_kind(&self, kind: Conditioning, folds: &[Fold]) -> Result<KindFit> {
        let mut rotations = Vec::with_capacity(folds.len());
        let mut losses = PerWordLoss::default();
        let mut lm = None;
        let mut search = None;
        for fold in folds {
            let mut cached = None;
            if lm.is_none() {
                let chosen = match &self.cfg.lm {
                    Some(fixed) => self.configure(fixed.clone(), kind, fold.pca.as_ref()),
                    None => {
                        let (c, s, out) = self.tune(kind, fold)?;
                        search = s;
                        cached = out;
                        c
                    }
                };
                chosen.validate()?;
                lm = Some(chosen);
            }
            let lm = lm.as_ref().expect("chosen above");
            let seed = self.seeds.train[fold.rotation];
            let (outcome, pca) = match cached {
                Some(out) => {
                    let pca = match (&fold.pca, kind.uses_meaning()) {
                        (Some(p), true) => Some(p.truncate(lm.pca_d)?),
                        _ => None,
                    };
                    (out, pca)
                }
                None => self.train_one(lm, fold, seed)?,
            };
            let test = phonolm::examples_for(self.lexicon, &fold.split.test, lm, pca.as_ref())?;
            let tl = phonolm::evaluate_with(&outcome.params, lm, &test, true, self.exec)?;
            let archive = match self.out {
                Some(out) => {
                    let rel = if folds.len() == 1 {
                        format!("models/{}.{}.archive", self.tag, kind.name())
                    } else {
                        format!("models/{}.{}.r{}.archive", self.tag, kind.name(), fold.rotation)
                    };
                    let path = out.join(&rel);
                    let json = ModelArchive::new(lm.clone(), self.lexicon, pca, outcome.params.clone()).to_json()?;
                    fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
                    Some(rel)
                }
                None => None,
            };
            log::info!(
                "{} {kind} rotation {}: valid {:.4} test {:.4} bits/phone (epoch {})",
                self.tag,
                fold.rotation,
                outcome.best_valid_bpp,
                tl.total_bits() / tl.total_tokens() as f64,
                outcome.best_epoch
            );
            rotations.push(RotationSummary {
                rotation: fold.rotation,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.curve.len() - 1,
                valid_bits_per_phone: outcome.best_valid_bpp,
                test_bits_per_phone: tl.total_bits() / tl.total_tokens() as f64,
                test_words: tl.len(),
                param_hash: outcome.params.hash(),
                archive,
            });
            losses = losses.concat(&tl);
        }
        let config = lm.expect("at least one rotation");
        Ok(KindFit { summary: ModelSummary { kind, config, search, rotations }, test_losses: losses })
    }

    /// Train `kinds` on the given rotations of `folds`. Kinds run as
    /// independent jobs; results follow the order of `kinds`.
    pub fn fit(&self, folds: &FoldAssignment, rotations: &[usize], kinds: &[Conditioning]) -> Result<Vec<KindFit>> {
        if let Some(out) = self.out {
            let dir = out.join("models");
            fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        let prepared = self.folds(folds, rotations, kinds)?;
        self.exec.map_slice(kinds, |&k| self.fit_kind(k, &prepared)).into_iter().collect()
    }
}

/// Overwrite the tuned fields of `base` with a search point.
pub fn apply_point(base: &LmConfig, space: &SearchSpace, native: &[f64]) -> LmConfig {
    let mut c = base.clone();
    let size = |x: f64| x.round().max(1.0) as usize;
    for (d, &x) in space.dims.iter().zip(native) {
        match d.name.as_str() {
            "layers" => c.layers = size(x),
            "hidden_size" => c.hidden_size = size(x),
            "phone_embed_size" => c.phone_embed_size = size(x),
            "pca_d" => c.pca_d = size(x),
            "dropout" => c.dropout = x.clamp(0.0, 0.99),
            other => log::warn!("ignoring unknown search dimension {other}"),
        }
    }
    c
}

pub fn rotations(cfg: &RunConfig, all: bool) -> Vec<usize> {
    if all || cfg.folds.rotate {
        (0..cfg.folds.k).collect()
    } else {
        vec![0]
    }
}

pub fn split_language(lex: &Lexicon, cfg: &RunConfig, seeds: &LanguageSeeds) -> Result<FoldAssignment> {
    Ok(lexicon::split_folds(lex, cfg.folds.k, seeds.folds)?)
}

/// One analysed language: the report row plus everything needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSummary {
    pub language: String,
    pub load: Option<LoadStats>,
    pub seeds: LanguageSeeds,
    pub rotations: Vec<usize>,
    pub models: Vec<ModelSummary>,
    pub report: MiReport,
}

#[derive(Debug, Clone)]
pub struct LanguageOutcome {
    pub summary: LanguageSummary,
    pub losses: ModelLosses,
}

/// Estimate systematicity for an in-memory lexicon.
pub fn analyse_lexicon(
    lex: &Lexicon,
    cfg: &RunConfig,
    load: Option<LoadStats>,
    out: Option<&Path>,
    exec: Execution,
) -> Result<LanguageOutcome> {
    let seeds = LanguageSeeds::new(cfg.seed, &lex.language, cfg.folds.k);
    let folds = split_language(lex, cfg, &seeds)?;
    let rots = rotations(cfg, false);
    let kinds = cfg.kinds();
    let trainer = Trainer { cfg, lexicon: lex, tag: lex.language.clone(), seeds: &seeds, out, exec };
    let fits = trainer.fit(&folds, &rots, &kinds)?;
    let mut losses = ModelLosses::default();
    for f in &fits {
        let slot = match f.summary.kind {
            Conditioning::Nothing => &mut losses.uncond,
            Conditioning::Meaning => &mut losses.meaning,
            Conditioning::Class => &mut losses.class,
            Conditioning::MeaningAndClass => &mut losses.meaning_and_class,
        };
        *slot = Some(f.test_losses.clone());
    }
    let report = MiReport::build(&lex.language, &losses, cfg.delta_mode, cfg.permutations, seeds.permutation)?;
    let summary = LanguageSummary {
        language: lex.language.clone(),
        load,
        seeds,
        rotations: rots,
        models: fits.into_iter().map(|f| f.summary).collect(),
        report,
    };
    Ok(LanguageOutcome { summary, losses })
}

/// Load and analyse one configured language.
pub fn run_language(src: &LanguageSource, cfg: &RunConfig, out: Option<&Path>, exec: Execution) -> Result<LanguageOutcome> {
    let go = || {
        let (lex, stats) = load_language(src, cfg)?;
        analyse_lexicon(&lex, cfg, Some(stats), out, exec)
    };
    go().map_err(|e| e.in_language(&src.name))
}
