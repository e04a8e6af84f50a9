//! Synthetic lexica on disk: TSV, embeddings, the generating spec, its exact
//! entropies and a ready-to-run config.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use signform_core::lexicon::{Lexicon, TokenizeMode, TokenizeOptions};
use signform_core::rng::{self, stream};
use signform_core::synthbench::{ExactEntropy, Generated, SyntheticSpec};

use crate::config::{LanguageSource, RunConfig};
use crate::error::{CliError, Result};

/// A named spec or a spec file.
#[derive(Debug, Clone, PartialEq)]
pub enum Preset {
    TwoCluster,
    UniformSinglePhone,
    /// One cluster: meanings carry no information about forms.
    Null,
    TargetMi(f64),
    PlantedPrefix,
    File(PathBuf),
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "two-cluster" => Preset::TwoCluster,
            "uniform" => Preset::UniformSinglePhone,
            "null" => Preset::Null,
            "planted-prefix" => Preset::PlantedPrefix,
            _ => match s.strip_prefix("target-mi:") {
                Some(v) => Preset::TargetMi(v.parse().map_err(|_| CliError::Config(format!("bad MI target {v:?}")))?),
                None => Preset::File(PathBuf::from(s)),
            },
        })
    }

    pub fn spec(&self) -> Result<SyntheticSpec> {
        Ok(match self {
            Preset::TwoCluster => SyntheticSpec::two_cluster(),
            Preset::UniformSinglePhone => SyntheticSpec::uniform_single_phone(),
            Preset::Null => null_spec(0),
            Preset::TargetMi(t) => SyntheticSpec::with_target_mi(*t, 4, 4, 2, 0.3)?,
            Preset::PlantedPrefix => SyntheticSpec::planted_prefix(8, 5, 1, 0.1, vec![2, 3]),
            Preset::File(p) => SyntheticSpec::from_json(&fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
        })
    }
}

/// Single-cluster chain over five phones with noisy meanings; exact MI is 0.
pub fn null_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::random(5, 1, 5, 3, 0.5, 0.5, false, seed)
}

/// Reassign meanings by a seeded permutation, destroying any form–meaning link.
pub fn shuffle_meanings(lex: &Lexicon, seed: u64) -> Lexicon {
    let mut order: Vec<usize> = (0..lex.len()).collect();
    order.shuffle(&mut rng::rng_for(seed, stream::SHUFFLE, u64::MAX));
    let mut out = lex.clone();
    for (dst, &src) in out.signs.iter_mut().zip(&order) {
        dst.meaning = lex.signs[src].meaning.clone();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRecord {
    pub language: String,
    pub words: usize,
    pub seed: u64,
    pub shuffled_meanings: bool,
    pub exact: ExactEntropy,
    pub mi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub preset: Preset,
    pub words: usize,
    pub name: String,
    pub seed: u64,
    pub shuffle_meanings: bool,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub generated: Generated,
    pub record: ExactRecord,
    pub config_path: PathBuf,
}

/// Config that runs the pipeline on files written by [`write_lexicon`].
pub fn skeleton_config(name: &str, seed: u64) -> RunConfig {
    RunConfig {
        languages: vec![LanguageSource {
            name: name.to_string(),
            lexicon: PathBuf::from(format!("{name}.tsv")),
            embeddings: Some(PathBuf::from(format!("{name}.vec"))),
        }],
        tokenize: TokenizeOptions { mode: TokenizeMode::PreTokenized, strip_prosodic_marks: false },
        seed,
        ..Default::default()
    }
}

/// Write `{name}.tsv` (space-separated phones) and `{name}.vec`.
pub fn write_lexicon(lex: &Lexicon, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tsv = dir.join(format!("{name}.tsv"));
    let vec = dir.join(format!("{name}.vec"));
    let mut buf = Vec::new();
    lex.write_tsv(&mut buf)?;
    fs::write(&tsv, buf).map_err(|e| CliError::io(&tsv, e))?;
    let mut buf = Vec::new();
    lex.write_embeddings(&mut buf)?;
    fs::write(&vec, buf).map_err(|e| CliError::io(&vec, e))?;
    Ok((tsv, vec))
}

pub fn cmd_synth(args: &SynthArgs, dir: &Path) -> Result<SynthOutput> {
    let spec = args.preset.spec()?;
    let exact = spec.exact_entropy()?;
    let mut generated = spec.generate(args.words, args.seed, &args.name)?;
    if args.shuffle_meanings {
        generated.lexicon = shuffle_meanings(&generated.lexicon, args.seed);
    }
    write_lexicon(&generated.lexicon, dir, &args.name)?;
    let spec_path = dir.join(format!("{}.spec.json", args.name));
    fs::write(&spec_path, serde_json::to_string_pretty(&spec)?).map_err(|e| CliError::io(&spec_path, e))?;
    let mi = if args.shuffle_meanings { 0.0 } else { exact.mi().max(0.0) };
    let record = ExactRecord {
        language: args.name.clone(),
        words: args.words,
        seed: args.seed,
        shuffled_meanings: args.shuffle_meanings,
        exact,
        mi,
    };
    let exact_path = dir.join("exact.json");
    fs::write(&exact_path, serde_json::to_string_pretty(&record)? + "\n").map_err(|e| CliError::io(&exact_path, e))?;
    let config_path = dir.join("config.json");
    let cfg = skeleton_config(&args.name, args.seed);
    fs::write(&config_path, cfg.to_json_pretty()? + "\n").map_err(|e| CliError::io(&config_path, e))?;
    Ok(SynthOutput { generated, record, config_path })
}
