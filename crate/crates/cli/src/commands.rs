//! The subcommands, as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use signform_core::exec;
use signform_core::phonesthemes::{self, AffixCandidate};
use signform_core::phonolm::{Conditioning, LmConfig};
use signform_core::Execution;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{self, LanguageSeeds, ModelSummary, Trainer};
use crate::report::{self, Report};

fn prepare(cfg: &RunConfig) -> Result<Execution> {
    cfg.validate()?;
    exec::set_threads(cfg.threads);
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    Ok(Execution::default())
}

/// Full pipeline for every configured language; any failure aborts the run.
pub fn cmd_estimate(cfg: &RunConfig) -> Result<Report> {
    let exec = prepare(cfg)?;
    let out = cfg.output_dir.as_path();
    let results = exec.map_slice(&cfg.languages, |src| pipeline::run_language(src, cfg, Some(out), exec));
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        summaries.push(r?.summary);
    }
    let report = Report::build(cfg, summaries, Vec::new())?;
    report::write_all(&report, out, false)?;
    Ok(report)
}

/// Like [`cmd_estimate`], but a failing language is recorded and skipped;
/// adds aggregate means and the density curves.
pub fn cmd_batch(cfg: &RunConfig) -> Result<Report> {
    let exec = prepare(cfg)?;
    let out = cfg.output_dir.as_path();
    let results = exec.map_slice(&cfg.languages, |src| pipeline::run_language(src, cfg, Some(out), exec));
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => summaries.push(o.summary),
            Err(e) => {
                log::error!("{e}");
                failures.push(e.record());
            }
        }
    }
    let report = Report::build(cfg, summaries, failures)?;
    report::write_all(&report, out, true)?;
    if report.languages.is_empty() {
        return Err(CliError::Config(format!("all {} languages failed", cfg.languages.len())));
    }
    Ok(report)
}

/// Re-render the tables and plots of an existing `report.json`.
pub fn cmd_report(dir: &Path) -> Result<Report> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let report = Report::from_json(&text)?;
    report::write_all(&report, dir, true)?;
    Ok(report)
}

/// Mine prefixes and suffixes for every language. Every word needs an
/// out-of-sample loss, so all fold rotations are trained, for the forward
/// and for the reversed forms.
pub fn cmd_phonesthemes(cfg: &RunConfig) -> Result<Vec<(String, Vec<AffixCandidate>)>> {
    let mut cfg = cfg.clone();
    for k in [Conditioning::Nothing, Conditioning::Meaning] {
        if !cfg.has_kind(k) {
            cfg.model_kinds.push(k);
        }
    }
    let exec = prepare(&cfg)?;
    let out = cfg.output_dir.as_path();
    let kinds = [Conditioning::Nothing, Conditioning::Meaning];
    let mut rows = Vec::new();
    for src in &cfg.languages {
        let mine = || -> Result<Vec<AffixCandidate>> {
            let (lex, _) = pipeline::load_language(src, &cfg)?;
            let seeds = LanguageSeeds::new(cfg.seed, &src.name, cfg.folds.k);
            let folds = pipeline::split_language(&lex, &cfg, &seeds)?;
            let rots = pipeline::rotations(&cfg, true);
            let rev = phonesthemes::reverse_forms(&lex);
            let forward = Trainer { cfg: &cfg, lexicon: &lex, tag: src.name.clone(), seeds: &seeds, out: Some(out), exec }
                .fit(&folds, &rots, &kinds)?;
            let reversed =
                Trainer { cfg: &cfg, lexicon: &rev, tag: format!("{}.rev", src.name), seeds: &seeds, out: Some(out), exec }
                    .fit(&folds, &rots, &kinds)?;
            let pair = |f: &[pipeline::KindFit]| (f[0].test_losses.clone(), f[1].test_losses.clone());
            let (fu, fm) = pair(&forward);
            let (ru, rm) = pair(&reversed);
            Ok(phonesthemes::mine_with(
                &lex,
                Some((&fu, &fm)),
                Some((&ru, &rm)),
                &cfg.phonesthemes,
                seeds.phonesthemes,
                exec,
            )?)
        };
        rows.push((src.name.clone(), mine().map_err(|e| e.in_language(&src.name))?));
    }
    let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = out.join(name);
        fs::write(&path, buf).map_err(|e| CliError::io(&path, e))
    };
    write("phonesthemes.tsv", &|b| report::write_phonesthemes(&rows, b))?;
    write("phonesthemes_detail.tsv", &|b| report::write_phonesthemes_detail(&rows, b))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedLanguage {
    pub language: String,
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperoptReport {
    pub config: RunConfig,
    pub languages: Vec<TunedLanguage>,
    /// Best configuration per language and model kind.
    pub best: BTreeMap<String, BTreeMap<String, LmConfig>>,
}

/// Run only the searches (first fold) and record the winners. The search
/// logs let a later `estimate` resume without repeating trials.
pub fn cmd_hyperopt(cfg: &RunConfig) -> Result<HyperoptReport> {
    if cfg.lm.is_some() {
        return Err(CliError::Config("the config fixes `lm`; remove it to search".into()));
    }
    let exec = prepare(cfg)?;
    let out = cfg.output_dir.as_path();
    let mut languages = Vec::new();
    let mut best = BTreeMap::new();
    for src in &cfg.languages {
        let tuned = || -> Result<TunedLanguage> {
            let (lex, _) = pipeline::load_language(src, cfg)?;
            let seeds = LanguageSeeds::new(cfg.seed, &src.name, cfg.folds.k);
            let folds = pipeline::split_language(&lex, cfg, &seeds)?;
            let fits = Trainer { cfg, lexicon: &lex, tag: src.name.clone(), seeds: &seeds, out: Some(out), exec }
                .fit(&folds, &[0], &cfg.kinds())?;
            Ok(TunedLanguage { language: src.name.clone(), models: fits.into_iter().map(|f| f.summary).collect() })
        };
        let t = tuned().map_err(|e| e.in_language(&src.name))?;
        best.insert(t.language.clone(), t.models.iter().map(|m| (m.kind.name().to_string(), m.config.clone())).collect());
        languages.push(t);
    }
    let report = HyperoptReport { config: cfg.clone(), languages, best };
    let path = out.join("hyperopt.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
