use std::path::Path;

use muon_lab::config::RunConfig;
use muon_lab::error::LabError;
use muon_lab::harness::{
    aggregate, cesaro_mean, descent_check, envelope_check, fit_rate, lower_window_start, mean_se, run_ensemble,
    spot_steps, window_sums, EnsembleRow, EnsembleStats, Experiment, Moment, RateMetric, Status,
};
use muon_lab_core::rng::{Purpose, StreamKey};

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text).unwrap_or_else(|e| panic!("{e}"))
}

fn exp(text: &str) -> Experiment {
    Experiment::from_config(&cfg(text)).unwrap()
}

const NOISY: &str = r#"
seed = 3
horizon = 40
[objective]
components = 3
rows = 3
cols = 2
nu = 0.5
[noise]
kind = "pareto"
alpha = 1.8
x_m = 0.2
p = 1.5
[schedule]
eta = 0.3
a = 0.7
[optimizer]
kind = "sgd"
"#;

fn stats_from(eta: &[f64], g2: &[f64]) -> EnsembleStats {
    let rows = eta
        .iter()
        .zip(g2)
        .enumerate()
        .map(|(t, (&eta, &x))| EnsembleRow {
            t: t as u64,
            eta,
            b: 1,
            mean_f: 0.0,
            se_f: 0.0,
            mean_g: x.sqrt(),
            se_g: 0.0,
            mean_g2: x,
            se_g2: 0.0,
        })
        .collect();
    EnsembleStats {
        seeds: 1,
        rows,
        final_mean_f: 0.0,
        final_mean_g: 0.0,
        mean_m0_error: None,
    }
}

#[test]
fn mean_se_by_hand() {
    assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
    let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    // sample variance 5/3, over n = 4
    assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
}

#[test]
fn one_trial_ensemble_is_the_trace() {
    let e = exp(NOISY);
    let tr = e.run_trial(0).unwrap();
    let stats = aggregate(std::slice::from_ref(&tr)).unwrap();
    assert_eq!(stats.len(), 40);
    for (row, rec) in stats.rows.iter().zip(&tr.records) {
        assert_eq!(row.mean_f, rec.f);
        assert_eq!(row.mean_g, rec.g);
        assert_eq!(row.mean_g2, rec.g * rec.g);
        assert_eq!((row.se_f, row.se_g), (0.0, 0.0));
    }
    assert_eq!(stats.final_mean_f, tr.final_f);
}

#[test]
fn noiseless_trials_agree_exactly() {
    let text = NOISY.replace(
        "kind = \"pareto\"\nalpha = 1.8\nx_m = 0.2\np = 1.5",
        "kind = \"none\"\np = 2.0",
    );
    let mut c = cfg(&text);
    c.seeds = 5;
    let ens = run_ensemble(&Experiment::from_config(&c).unwrap()).unwrap();
    for r in &ens.stats.rows {
        assert_eq!((r.se_f, r.se_g, r.se_g2), (0.0, 0.0, 0.0));
    }
    for tr in &ens.traces[1..] {
        assert_eq!(tr.records, ens.traces[0].records);
    }
}

#[test]
fn trials_are_reproducible_and_distinct() {
    let e = exp(NOISY);
    assert_eq!(e.run_trial(2).unwrap(), e.run_trial(2).unwrap());
    assert_ne!(e.run_trial(2).unwrap().records, e.run_trial(3).unwrap().records);
}

#[test]
fn standard_error_shrinks_with_ensemble_size() {
    let gaussian = NOISY.replace(
        "kind = \"pareto\"\nalpha = 1.8\nx_m = 0.2\np = 1.5",
        "kind = \"gaussian\"\nstd = 0.5\np = 2.0",
    );
    let mean_se_f = |seeds: u64| {
        let mut c = cfg(&gaussian);
        c.seeds = seeds;
        let ens = run_ensemble(&Experiment::from_config(&c).unwrap()).unwrap();
        ens.stats.rows[10..].iter().map(|r| r.se_f).sum::<f64>() / 30.0
    };
    let ratio = mean_se_f(16) / mean_se_f(64);
    // 1/sqrt(S): a factor of 2, within a factor of 2
    assert!((1.0..=4.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn cesaro_mean_by_hand() {
    let s = stats_from(&[1.0, 0.5, 0.25], &[4.0, 2.0, 1.0]);
    // (4 + 1 + 0.25) / 1.75
    assert_eq!(cesaro_mean(&s, Moment::Second, 0..3).unwrap(), 3.0);
    assert_eq!(cesaro_mean(&s, Moment::Second, 1..2).unwrap(), 2.0);
    let flat = stats_from(&[0.3, 0.7, 0.1, 2.0], &[9.0; 4]);
    assert!((cesaro_mean(&flat, Moment::First, 0..4).unwrap() - 3.0).abs() < 1e-15);
    assert!(cesaro_mean(&s, Moment::First, 2..2).is_err());
    assert!(cesaro_mean(&s, Moment::First, 0..4).is_err());
}

#[test]
fn rate_fit_recovers_inverse_step_sum() {
    // all mass at t = 0, so the Cesàro mean over [0, T) is exactly C / Σ η_t
    let n = 10_000;
    let eta: Vec<f64> = (0..n).map(|t| (t as f64 + 1.0).powf(-0.1)).collect();
    let mut g2 = vec![0.0; n];
    g2[0] = 5.0;
    let s = stats_from(&eta, &g2);
    let horizons = [10, 100, 1000, 3000, 10_000];
    let fit = fit_rate(&s, RateMetric::Cesaro, Moment::Second, &horizons, -1.0).unwrap();
    assert!((fit.slope + 1.0).abs() < 1e-12, "slope {}", fit.slope);
    assert!(fit.residual < 1e-12);
    let fit = fit_rate(&s, RateMetric::MinGrad, Moment::Second, &horizons, -0.45).unwrap();
    // sqrt of C / Σ η ~ T^{-0.45}, up to the lower order terms of the sum
    assert!((fit.slope + 0.45).abs() < 0.02, "slope {}", fit.slope);
}

#[test]
fn rate_fit_preconditions() {
    let s = stats_from(&vec![1.0; 1000], &vec![1.0; 1000]);
    let err = fit_rate(&s, RateMetric::MinGrad, Moment::First, &[10, 100, 1000, 500], -0.5).unwrap_err();
    assert!(err.to_string().contains("5 horizons"), "{err}");
    let err = fit_rate(&s, RateMetric::MinGrad, Moment::First, &[100, 200, 300, 400, 500], -0.5).unwrap_err();
    assert!(err.to_string().contains("decades"), "{err}");
}

#[test]
fn spot_steps_are_even() {
    assert_eq!(spot_steps(100, 4), vec![0, 25, 50, 75]);
    assert_eq!(spot_steps(3, 10), vec![0, 1, 2]);
}

#[test]
fn window_sums_are_differences_of_prefix_sums() {
    let e = exp(NOISY);
    let whole = window_sums(&e, 0, 30);
    let head = window_sums(&e, 0, 10);
    let tail = window_sums(&e, 10, 20);
    assert!((whole.eta - head.eta - tail.eta).abs() < 1e-12);
    let direct: f64 = (10..30).map(|t| e.steps.at(t)).sum();
    assert!((tail.eta - direct).abs() < 1e-12);
}

#[test]
fn stationary_start_makes_the_lower_envelope_vacuous() {
    let text = r#"
seeds = 2
horizon = 30
[objective]
anchor_scale = 0.0
init_scale = 0.0
[noise]
kind = "none"
p = 2.0
[optimizer]
kind = "muon"
beta = 0.0
[checks]
horizons = [10, 30]
"#;
    let e = exp(text);
    let ens = run_ensemble(&e).unwrap();
    assert!(ens.stats.rows.iter().all(|r| r.mean_g == 0.0));
    assert_eq!(lower_window_start(&ens.stats), None);
    let rows = envelope_check(&e, &ens).unwrap();
    for r in &rows {
        if r.check_id.starts_with("envelope-lower") {
            assert_eq!(r.status, Status::Vacuous, "{r:?}");
        } else {
            assert_eq!(r.status, Status::Pass, "{r:?}");
            assert_eq!(r.lhs, 0.0);
        }
    }
}

#[test]
fn horizons_beyond_the_run_are_skipped() {
    let mut c = cfg(NOISY);
    c.seeds = 2;
    c.checks.horizons = vec![10, 1000];
    let e = Experiment::from_config(&c).unwrap();
    let ens = run_ensemble(&e).unwrap();
    let rows = envelope_check(&e, &ens).unwrap();
    assert!(rows.iter().filter(|r| r.t == 1000).all(|r| r.status == Status::Skipped));
}

#[test]
fn large_sgd_steps_are_skipped() {
    // L = 1, ν = 1, so steps need η < 2
    let text = r#"
horizon = 20
[objective]
nu = 1.0
[noise]
kind = "none"
p = 2.0
[schedule]
eta = 3.0
a = 0.5
[optimizer]
kind = "sgd"
"#;
    let e = exp(text);
    let d = descent_check(&e, 0).unwrap();
    assert_eq!(d.entries.len(), 20);
    // η_t = 3 / sqrt(t + 1) >= 2 for t <= 1
    assert_eq!(d.entries[0].status, Status::Skipped);
    assert_eq!(d.entries[1].status, Status::Skipped);
    assert!(d.entries[0].reason.is_some());
    assert!(
        d.entries[2..].iter().all(|x| x.status == Status::Pass),
        "{:?}",
        d.entries
    );
}

#[test]
fn sgd_bound_needs_moment_above_smoothness() {
    // 1 + ν = 2 > p = 1.5: no SGD bound exists
    let text = NOISY.replace("nu = 0.5", "nu = 1.0");
    let mut c = cfg(&text);
    c.seeds = 2;
    c.checks.horizons = vec![10];
    let e = Experiment::from_config(&c).unwrap();
    let ens = run_ensemble(&e).unwrap();
    let rows = envelope_check(&e, &ens).unwrap();
    let upper = rows.iter().find(|r| r.check_id.starts_with("envelope-upper")).unwrap();
    assert_eq!(upper.status, Status::Unavailable);
    c.checks.replicates = 100;
    c.checks.descent_steps = 3;
    let d = descent_check(&Experiment::from_config(&c).unwrap(), 0).unwrap();
    assert!(d.entries.iter().all(|x| x.status == Status::Skipped));
}

#[test]
fn overflow_is_tagged_with_its_trial() {
    // f = ‖W - A‖² / 2 with η near 10 overshoots by a factor 8 or more each
    // step, past the f64 range well before step 400
    let text = r#"
seeds = 3
horizon = 400
[objective]
nu = 1.0
[noise]
kind = "none"
p = 2.0
[schedule]
eta = 10.0
a = 0.01
[optimizer]
kind = "sgd"
"#;
    let err = run_ensemble(&exp(text)).unwrap_err();
    assert!(matches!(err, LabError::Trial { trial: 0, .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn presets_declare_a_valid_holder_constant() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let e = Experiment::from_config(&RunConfig::load(&path).unwrap()).unwrap();
        let obj = &e.objective;
        let mut rng = StreamKey::new(1, 0, Purpose::Probe, 0).rng();
        for i in 0..obj.len() {
            let ratio = obj.holder_ratio_probe(i, 2000, &mut rng).unwrap();
            let l = obj.declared_l()[i];
            assert!(
                ratio <= l * (1.0 + 1e-9),
                "{}: component {i} ratio {ratio} > {l}",
                path.display()
            );
        }
    }
}
