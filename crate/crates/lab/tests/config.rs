use std::path::{Path, PathBuf};

use muon_lab::config::{OptimizerKind, RunConfig};
use muon_lab::error::LabError;
use muon_lab_core::noise::NoiseKind;
use muon_lab_core::schedule::BatchKind;
use proptest::prelude::*;

fn presets() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn every_preset_loads_and_round_trips() {
    let files = presets();
    assert!(files.len() >= 10);
    for path in files {
        let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        // the echo is a fixed point
        assert_eq!(cfg.to_toml(), again.to_toml());
    }
}

#[test]
fn output_directory_defaults_to_name() {
    let cfg = RunConfig::parse("name = \"abc\"").unwrap();
    assert_eq!(cfg.out, "out/abc");
    let cfg = RunConfig::parse("name = \"abc\"\nout = \"elsewhere\"").unwrap();
    assert_eq!(cfg.out, "elsewhere");
}

#[test]
fn beta_of_one_is_rejected_with_its_range() {
    let err = RunConfig::parse("[optimizer]\nkind = \"muon\"\nbeta = 1.0\n").unwrap_err();
    assert!(err.mentions("optimizer.beta"), "{err}");
    assert!(err.mentions("[0, 1)"), "{err}");
}

#[test]
fn misspelled_keys_get_suggestions() {
    let err = RunConfig::parse("learning_rate = 0.1\n").unwrap_err();
    assert!(err.mentions("schedule.eta"), "{err}");
    let err = RunConfig::parse("[optimizer]\nmomentum = 0.5\n").unwrap_err();
    assert!(err.mentions("optimizer.beta"), "{err}");
}

#[test]
fn all_problems_are_reported_together() {
    let text = "seeds = 0\n[schedule]\na = 1.5\n[noise]\np = 3.0\n[optimizer]\nbeta = -0.1\n";
    let err = RunConfig::parse(text).unwrap_err();
    assert!(err.0.len() >= 4, "{err}");
    for key in ["seeds", "schedule.a", "noise.p", "optimizer.beta"] {
        assert!(err.mentions(key), "missing {key} in {err}");
    }
}

#[test]
fn kind_specific_keys_must_match_the_kind() {
    let err = RunConfig::parse("[noise]\nkind = \"gaussian\"\nalpha = 1.8\n").unwrap_err();
    assert!(err.mentions("noise.alpha"), "{err}");
    let err = RunConfig::parse("[schedule]\nbatch = \"constant\"\ndelta = 2.0\n").unwrap_err();
    assert!(err.mentions("schedule.delta"), "{err}");
}

#[test]
fn tail_index_must_exceed_moment_order() {
    let err = RunConfig::parse("[noise]\nkind = \"pareto\"\nalpha = 1.4\nx_m = 1.0\np = 1.5\n").unwrap_err();
    assert!(err.mentions("noise.alpha"), "{err}");
}

#[test]
fn geometric_batches_need_a_cap() {
    let err = RunConfig::parse("[schedule]\nbatch = \"geometric\"\nb = 1\ndelta = 2.0\n").unwrap_err();
    assert!(err.mentions("schedule.max_batch"), "{err}");
}

#[test]
fn malformed_toml_is_a_config_error() {
    let err = RunConfig::parse("seed = [").unwrap_err();
    assert!(!err.0.is_empty());
}

#[test]
fn missing_file_is_a_config_error() {
    let err = RunConfig::load(Path::new("/nonexistent/muon-lab.toml")).unwrap_err();
    assert!(matches!(err, LabError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[optimizer]\nbeta = 1.0\n").unwrap();
    let err = RunConfig::load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

proptest! {
    #[test]
    fn generated_configs_round_trip(
        seed in any::<u32>(),
        seeds in 1u64..64,
        eta in 1e-3f64..10.0,
        a in 0.05f64..1.0,
        beta in 0.0f64..0.999,
        p in 1.05f64..2.0,
        alpha_gap in 0.01f64..3.0,
        x_m in 1e-3f64..5.0,
        b in 1u64..32,
        delta in 1.01f64..4.0,
        muon in any::<bool>(),
        geometric in any::<bool>(),
    ) {
        let mut cfg = RunConfig::parse("").unwrap();
        cfg.seed = seed as u64;
        cfg.seeds = seeds;
        cfg.schedule.eta = eta;
        cfg.schedule.a = a;
        cfg.optimizer.kind = if muon { OptimizerKind::Muon } else { OptimizerKind::Sgd };
        cfg.optimizer.beta = beta;
        cfg.noise.p = p;
        cfg.noise.kind = NoiseKind::SymmetricPareto { alpha: p + alpha_gap, x_m };
        if geometric {
            cfg.schedule.batch = BatchKind::Geometric { b, delta };
            cfg.schedule.max_batch = Some(b * 64);
        } else {
            cfg.schedule.batch = BatchKind::Constant { b };
            cfg.schedule.max_batch = None;
        }
        prop_assert!(cfg.validate().is_ok());
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
