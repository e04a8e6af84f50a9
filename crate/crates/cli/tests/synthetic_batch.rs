use std::path::Path;

use signform::commands;
use signform::config::{LanguageSource, RunConfig};
use signform::report::Report;
use signform::synth::{self, Preset, SynthArgs};
use signform::validate::synthetic_lm;
use signform_core::phonolm::Conditioning;

const WORDS: usize = 5_000;

fn add_language(cfg: &mut RunConfig, dir: &Path, preset: Preset, name: &str, shuffle: bool) -> f64 {
    let args = SynthArgs { preset, words: WORDS, name: name.into(), seed: 17, shuffle_meanings: shuffle };
    let out = synth::cmd_synth(&args, dir).unwrap();
    cfg.languages.push(LanguageSource {
        name: name.into(),
        lexicon: dir.join(format!("{name}.tsv")),
        embeddings: Some(dir.join(format!("{name}.vec"))),
    });
    out.record.mi
}

fn base_config(dir: &Path) -> RunConfig {
    let mut cfg = synth::skeleton_config("unused", 3);
    cfg.languages.clear();
    cfg.model_kinds = vec![Conditioning::Nothing, Conditioning::Meaning];
    cfg.lm = Some(synthetic_lm(Conditioning::Nothing, 2));
    cfg.permutations = 10_000;
    cfg.output_dir = dir.join("out");
    cfg
}

fn mi_of(report: &Report, name: &str) -> (f64, f64, bool) {
    let e = report.languages.iter().find(|e| e.summary.language == name).unwrap();
    let s = e.summary.report.systematicity.as_ref().unwrap();
    (s.mi, s.permutation.p_value, e.significance.mi.unwrap())
}

#[test]
fn batch_recovers_graded_mi_and_flags_significance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path());
    let langs = [
        ("mi00", Preset::Null),
        ("mi10", Preset::TargetMi(0.1)),
        ("mi20", Preset::TargetMi(0.2)),
        ("mi30", Preset::TargetMi(0.3)),
        ("mi33", Preset::TwoCluster),
    ];
    let mut exact = Vec::new();
    for (name, preset) in &langs {
        exact.push(add_language(&mut cfg, dir.path(), preset.clone(), name, false));
    }
    let report = commands::cmd_batch(&cfg).unwrap();
    assert!(report.failures.is_empty());
    for ((name, _), truth) in langs.iter().zip(&exact) {
        let (mi, p, significant) = mi_of(&report, name);
        assert!((mi - truth).abs() <= 0.05, "{name}: estimated {mi}, exact {truth}");
        assert_eq!(significant, *truth > 0.05, "{name}: p = {p}");
    }
    assert_eq!(report.aggregate.languages, 5);
    assert_eq!(report.aggregate.significant, 4);
    for f in ["report.csv", "report.json", "appendix.tsv", "mi_density.csv", "mi_density.svg"] {
        assert!(cfg.output_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn shuffled_pairing_is_not_significant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path());
    add_language(&mut cfg, dir.path(), Preset::TwoCluster, "shuf", true);
    let report = commands::cmd_estimate(&cfg).unwrap();
    let (mi, p, significant) = mi_of(&report, "shuf");
    assert!(mi.abs() <= 0.03, "{mi}");
    assert!(p > 0.05 && !significant, "{p}");
}

#[test]
fn single_language_aggregate_equals_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path());
    cfg.permutations = 1_000;
    add_language(&mut cfg, dir.path(), Preset::TwoCluster, "one", false);
    let report = commands::cmd_batch(&cfg).unwrap();
    let r = &report.languages[0].summary.report;
    let s = r.systematicity.as_ref().unwrap();
    let a = &report.aggregate;
    assert_eq!(a.languages, 1);
    assert_eq!(a.mean_h_w, Some(r.h_w.bits_per_phone));
    assert_eq!(a.mean_mi, Some(s.mi));
    assert_eq!(a.mean_uncertainty, Some(s.uncertainty));
    assert_eq!(a.mean_cohens_d, s.cohens_d);
    let again = commands::cmd_report(&cfg.output_dir).unwrap();
    assert_eq!(again, report);
}
