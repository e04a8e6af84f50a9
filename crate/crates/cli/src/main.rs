use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use signform::config::{Overrides, RunConfig, SEED_ENV, THREADS_ENV};
use signform::error::{CliError, Result};
use signform::synth::{Preset, SynthArgs};
use signform::validate::{self, Status, ValidateOptions, CRITERIA};
use signform::{commands, synth};

#[derive(Debug, Parser)]
#[command(name = "signform", version, about = "Measure form-meaning systematicity in lexica")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and the environment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the models and estimate systematicity; stops at the first failing language.
    Estimate,
    /// Like estimate, but skips failing languages and adds aggregates and density plots.
    Batch,
    /// Mine prefixes and suffixes that carry meaning.
    Phonesthemes,
    /// Run the hyperparameter searches only.
    Hyperopt,
    /// Re-render tables and plots from the report.json in --out.
    Report,
    /// Write a synthetic lexicon with known entropies.
    Synth {
        /// two-cluster, uniform, null, planted-prefix, target-mi:X or a spec file.
        #[arg(long, default_value = "two-cluster")]
        spec: String,
        #[arg(long, default_value_t = 5000)]
        words: usize,
        #[arg(long, default_value = "synth")]
        name: String,
        /// Randomly re-pair meanings with forms.
        #[arg(long)]
        shuffle_meanings: bool,
    },
    /// Run the acceptance battery.
    Validate {
        /// List the criteria and exit.
        #[arg(long)]
        list: bool,
        /// Perturb one analytic gradient so the gradient check must fail.
        #[arg(long)]
        inject_gradient_fault: bool,
        /// Run only these criteria (e.g. C1,C6).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    let flags = Overrides { seed: cli.seed, threads: cli.threads, output_dir: cli.out.clone() };
    cfg.apply(&flags, |k| std::env::var(k).ok())?;
    Ok(cfg)
}

fn env_seed(cli: &Cli) -> Result<Option<u64>> {
    if cli.seed.is_some() {
        return Ok(cli.seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate => {
            let report = commands::cmd_estimate(&load_config(cli)?)?;
            println!("{} languages written", report.languages.len());
        }
        Command::Batch => {
            let report = commands::cmd_batch(&load_config(cli)?)?;
            println!("{} languages written, {} failed", report.languages.len(), report.failures.len());
        }
        Command::Phonesthemes => {
            let rows = commands::cmd_phonesthemes(&load_config(cli)?)?;
            for (lang, cands) in &rows {
                println!("{lang}: {} significant of {} candidates", cands.iter().filter(|c| c.bh_significant).count(), cands.len());
            }
        }
        Command::Hyperopt => {
            let report = commands::cmd_hyperopt(&load_config(cli)?)?;
            println!("{}", serde_json::to_string_pretty(&report.best)?);
        }
        Command::Report => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            commands::cmd_report(&dir)?;
        }
        Command::Synth { spec, words, name, shuffle_meanings } => {
            let args = SynthArgs {
                preset: Preset::parse(spec)?,
                words: *words,
                name: name.clone(),
                seed: env_seed(cli)?.unwrap_or(validate::SEED),
                shuffle_meanings: *shuffle_meanings,
            };
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let out = synth::cmd_synth(&args, &dir)?;
            println!("{}", out.config_path.display());
        }
        Command::Validate { list, inject_gradient_fault, only } => {
            if *list {
                for c in CRITERIA {
                    println!("{} {}", c.id, c.title);
                }
                return Ok(());
            }
            if let Some(t) = cli.threads.or(std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok())) {
                signform_core::exec::set_threads(t);
            }
            let opts = ValidateOptions { inject_gradient_fault: *inject_gradient_fault, only: only.clone() };
            let outcomes = validate::run_battery(&opts, |o| println!("{}", o.line()));
            let failed = outcomes.iter().filter(|o| o.status == Status::Fail).count();
            if failed > 0 {
                return Err(CliError::ValidationFailed { failed, total: outcomes.len() });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record().to_json());
            ExitCode::FAILURE
        }
    }
}
