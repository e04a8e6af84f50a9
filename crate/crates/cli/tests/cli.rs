use std::path::PathBuf;
use std::process::Command;

use signform::config::{Overrides, RunConfig, SEED_ENV, THREADS_ENV};
use signform::synth::{self, Preset, SynthArgs};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_signform"))
}

#[test]
fn list_names_every_criterion() {
    let out = bin().args(["validate", "--list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(ids, ["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11"]);
}

#[test]
fn gradient_fault_is_detected() {
    let out = bin().args(["validate", "--only", "C1", "--inject-gradient-fault"]).output().unwrap();
    assert!(!out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("[FAIL] C1"), "{stdout}");
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");
}

#[test]
fn clean_gradient_check_passes() {
    let out = bin().args(["validate", "--only", "C1,C6"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2, "{stdout}");
}

#[test]
fn missing_config_reports_json_error() {
    let out = bin().args(["estimate", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn synth_writes_a_runnable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--spec", "two-cluster", "--words", "50", "--name", "tc", "--seed", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["tc.tsv", "tc.vec", "tc.spec.json", "exact.json", "config.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let cfg = RunConfig::load(&dir.path().join("config.json")).unwrap();
    assert_eq!(cfg.seed, 4);
    cfg.validate().unwrap();
}

#[test]
fn unknown_config_fields_are_rejected() {
    assert!(RunConfig::from_json(r#"{"version": 1, "sed": 3}"#).is_err());
}

#[test]
fn flags_beat_environment_beat_file() {
    let mut cfg = RunConfig { seed: 1, threads: 2, ..Default::default() };
    let env = |k: &str| match k {
        SEED_ENV => Some("10".to_string()),
        THREADS_ENV => Some("3".to_string()),
        _ => None,
    };
    cfg.apply(&Overrides::default(), env).unwrap();
    assert_eq!((cfg.seed, cfg.threads), (10, 3));
    let flags = Overrides { seed: Some(99), threads: None, output_dir: Some(PathBuf::from("elsewhere")) };
    cfg.apply(&flags, env).unwrap();
    assert_eq!((cfg.seed, cfg.threads), (99, 3));
    assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    assert!(cfg.apply(&Overrides::default(), |_| Some("x".into())).is_err());
}

#[test]
fn shuffled_meanings_keep_the_multiset() {
    let dir = tempfile::tempdir().unwrap();
    let args = SynthArgs { preset: Preset::TwoCluster, words: 200, name: "s".into(), seed: 5, shuffle_meanings: true };
    let out = synth::cmd_synth(&args, dir.path()).unwrap();
    assert_eq!(out.record.mi, 0.0);
    let plain = SynthArgs { shuffle_meanings: false, ..args };
    let orig = synth::cmd_synth(&plain, dir.path()).unwrap();
    let key = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut a: Vec<_> = out.generated.lexicon.signs.iter().map(|s| key(&s.meaning)).collect();
    let mut b: Vec<_> = orig.generated.lexicon.signs.iter().map(|s| key(&s.meaning)).collect();
    assert_ne!(a, b);
    a.sort();
    b.sort();
    assert_eq!(a, b);
}
