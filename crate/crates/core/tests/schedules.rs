use muon_lab_core::schedule::{
    check_conditions, closed_form_caps, eta_lower_bound, partial_sums, partial_sums_at, BatchKind, BatchSchedule, Cap,
    Method, RowStatus, Series, SeriesParams, StepSchedule, DEFAULT_HORIZONS,
};
use proptest::prelude::*;

fn params(nu: f64, p: f64, beta: f64) -> SeriesParams {
    SeriesParams { nu, p, beta }
}

// Straightforward O(T²) evaluation of every series.
fn direct(step: &StepSchedule, batch: &BatchSchedule, sp: &SeriesParams, horizon: u64) -> [f64; 7] {
    let q = (sp.p - 1.0) / sp.p;
    let eta: Vec<f64> = (0..horizon).map(|t| step.at(t)).collect();
    let b: Vec<f64> = (0..horizon).map(|t| batch.value_at(t)).collect();
    let mut out = [0.0; 7];
    for t in 0..horizon as usize {
        out[0] += eta[t];
        out[1] += eta[t].powf(1.0 + sp.nu);
        out[2] += eta[t].powf(1.0 + sp.nu) / b[t].powf(sp.p - 1.0);
        out[3] += eta[t] / b[t].powf(q);
        out[4] += eta[t] * sp.beta.powi(t as i32);
        let mut inner_eta = 0.0;
        for i in 1..=t {
            inner_eta += sp.beta.powi(i as i32) * eta[t - i].powf(sp.nu);
        }
        let mut inner_b = 0.0;
        for i in 0..=t {
            inner_b += sp.beta.powi(i as i32) / b[t - i].powf(q);
        }
        out[5] += eta[t] * inner_eta;
        out[6] += eta[t] * inner_b;
    }
    out
}

const ORDER: [Series; 7] = [
    Series::Eta,
    Series::EtaPow,
    Series::EtaPowOverBatch,
    Series::EtaOverBatchRoot,
    Series::EtaBeta,
    Series::MomentumEta,
    Series::MomentumBatch,
];

#[test]
fn recursions_match_direct_sums() {
    let step = StepSchedule::new(0.3, 0.8).unwrap();
    for batch in [
        BatchSchedule::constant(4).unwrap(),
        BatchSchedule::geometric(2, 1.3).unwrap(),
    ] {
        let sp = params(0.6, 1.7, 0.85);
        let want = direct(&step, &batch, &sp, 700);
        let got = partial_sums(&step, &batch, &sp, 700);
        for (k, s) in ORDER.iter().enumerate() {
            assert!(
                (got.sum(*s) - want[k]).abs() <= 1e-11 * want[k].max(1.0),
                "{}",
                s.name()
            );
        }
    }
}

#[test]
fn step_sum_lower_bound_example() {
    let step = StepSchedule::new(1.0, 0.7).unwrap();
    let lb = eta_lower_bound(&step, 100);
    assert!((lb - 9.977).abs() < 5e-4, "{lb}");
    let sum: f64 = (0..100).map(|t| 1.0 / ((t + 1) as f64).powf(0.7)).sum();
    assert!(sum >= lb);
}

#[test]
fn quoted_cap_values() {
    let step = StepSchedule::new(1.0, 0.7).unwrap();
    let batch = BatchSchedule::geometric(8, 2.0).unwrap();
    let caps = closed_form_caps(&step, &batch, &params(1.0, 1.5, 0.5));
    let printed = caps.get(Series::EtaPowOverBatch).printed.value().unwrap();
    assert!((printed - 0.8536).abs() < 1e-4);
    let sound = caps.get(Series::EtaPowOverBatch).sound.value().unwrap();
    assert!((sound - printed * 2f64.sqrt()).abs() < 1e-12);
    assert!((caps.get(Series::MomentumEta).printed.value().unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(caps.get(Series::Eta).sound, Cap::Unbounded);

    let constant = BatchSchedule::constant(8).unwrap();
    let caps = closed_form_caps(&step, &constant, &params(1.0, 1.5, 0.5));
    assert_eq!(caps.get(Series::EtaOverBatchRoot).sound, Cap::Unbounded);
    assert_eq!(caps.get(Series::MomentumBatch).sound, Cap::Unbounded);
}

#[test]
fn quoted_caps_can_be_exceeded() {
    // geometric batch, a = 1, ν = 1, δ = 2, p = 2
    let step = StepSchedule::new(1.0, 1.0).unwrap();
    let batch = BatchSchedule::geometric(1, 2.0).unwrap();
    let sp = params(1.0, 2.0, 0.5);
    let caps = closed_form_caps(&step, &batch, &sp);
    let sums = partial_sums(&step, &batch, &sp, 100);
    let s = sums.sum(Series::EtaPowOverBatch);
    assert!(s > caps.get(Series::EtaPowOverBatch).printed.value().unwrap());
    assert!(s <= caps.get(Series::EtaPowOverBatch).sound.value().unwrap());

    // momentum double sum, a = 0.7
    let step = StepSchedule::new(1.0, 0.7).unwrap();
    let sums = partial_sums(&step, &batch, &sp, 100_000);
    let caps = closed_form_caps(&step, &batch, &sp);
    let s = sums.sum(Series::MomentumEta);
    assert!(s > caps.get(Series::MomentumEta).printed.value().unwrap());
    assert!(s <= caps.get(Series::MomentumEta).sound.value().unwrap());
}

#[test]
fn zero_momentum_reduces() {
    let step = StepSchedule::new(0.5, 0.9).unwrap();
    let batch = BatchSchedule::geometric(3, 1.5).unwrap();
    let r = partial_sums(&step, &batch, &params(0.8, 1.6, 0.0), 500);
    assert_eq!(r.sum(Series::MomentumEta), 0.0);
    let a = r.sum(Series::MomentumBatch);
    let b = r.sum(Series::EtaOverBatchRoot);
    assert!((a - b).abs() <= 1e-13 * b);
    assert_eq!(r.sum(Series::EtaBeta), step.at(0));
}

#[test]
fn condition_checks() {
    let sp = params(1.0, 1.5, 0.9);
    let step = StepSchedule::new(0.1, 0.7).unwrap();
    let geo = BatchSchedule::geometric(8, 2.0).unwrap();
    for method in [Method::Sgd, Method::Muon0, Method::Muon] {
        let r = check_conditions(&step, &geo, &sp, method, &DEFAULT_HORIZONS).unwrap();
        assert!(r.pass, "{}: {:?}", method.name(), r.failures);
        assert_eq!(r.rows.len(), method.required_series().len() * DEFAULT_HORIZONS.len());
    }

    // a simulation cap does not change the verdict
    let capped = BatchSchedule::new(BatchKind::Geometric { b: 8, delta: 2.0 }, Some(4096)).unwrap();
    assert!(
        check_conditions(&step, &capped, &sp, Method::Muon, &DEFAULT_HORIZONS)
            .unwrap()
            .pass
    );

    let divergent = StepSchedule::new(0.1, 0.4).unwrap();
    let r = check_conditions(&divergent, &geo, &sp, Method::Sgd, &DEFAULT_HORIZONS).unwrap();
    assert!(!r.pass);
    assert_eq!(r.failures, vec![Series::EtaPow]);
    assert!(r
        .rows
        .iter()
        .filter(|row| row.series == Series::EtaPow)
        .all(|row| row.status == RowStatus::Unbounded));

    let constant = BatchSchedule::constant(8).unwrap();
    let r = check_conditions(&step, &constant, &sp, Method::Muon0, &DEFAULT_HORIZONS).unwrap();
    assert_eq!(r.failures, vec![Series::EtaOverBatchRoot]);
    assert!(
        check_conditions(&step, &constant, &sp, Method::Sgd, &DEFAULT_HORIZONS)
            .unwrap()
            .pass
    );
    assert!(check_conditions(&step, &constant, &sp, Method::Sgd, &[]).is_err());
}

#[test]
fn sound_caps_hold_to_long_horizons() {
    use rand::Rng;
    let mut r = muon_lab_core::rng::StreamKey::new(0x44, 0, muon_lab_core::rng::Purpose::Aux, 0).rng();
    for _ in 0..40 {
        let step = StepSchedule::new(r.random_range(0.01..2.0), r.random_range(0.5..=1.0)).unwrap();
        let batch = BatchSchedule::geometric(r.random_range(1..32), r.random_range(1.05..3.0)).unwrap();
        let sp = params(
            r.random_range(0.05..=1.0),
            r.random_range(1.05..=2.0),
            r.random_range(0.0..0.99),
        );
        let caps = closed_form_caps(&step, &batch, &sp);
        let sums = partial_sums(&step, &batch, &sp, 100_000);
        for s in ORDER {
            if let Cap::Finite(c) = caps.get(s).sound {
                assert!(sums.sum(s) <= c * (1.0 + 1e-12), "{} {} > {c}", s.name(), sums.sum(s));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sums_monotone_and_bounded(
        eta in 0.01f64..2.0,
        a in 0.3f64..=1.0,
        b in 1u64..16,
        delta in 1.05f64..3.0,
        nu in 0.05f64..=1.0,
        p in 1.05f64..=2.0,
        beta in 0.0f64..0.99,
    ) {
        let step = StepSchedule::new(eta, a).unwrap();
        let batch = BatchSchedule::geometric(b, delta).unwrap();
        let sp = params(nu, p, beta);
        let horizons = [10, 100, 1000, 5000];
        let reports = partial_sums_at(&step, &batch, &sp, &horizons);
        for pair in reports.windows(2) {
            for s in ORDER {
                prop_assert!(pair[1].sum(s) >= pair[0].sum(s));
            }
        }
        let caps = closed_form_caps(&step, &batch, &sp);
        for r in &reports {
            prop_assert!(r.sum(Series::Eta) >= r.eta_lower_bound * (1.0 - 1e-12));
            for s in ORDER {
                if let Cap::Finite(c) = caps.get(s).sound {
                    prop_assert!(r.sum(s) <= c * (1.0 + 1e-12));
                }
            }
        }
    }
}
