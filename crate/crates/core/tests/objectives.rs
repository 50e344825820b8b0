mod common;

use common::gaussian;
use muon_lab_core::objective::{index_sampling_sigma_p, ComponentSpec, Family, HolderObjective, SigmaBoundInputs};
use muon_lab_core::rng::{Purpose, StreamKey};
use muon_lab_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn rng(i: u64) -> rand_chacha::ChaCha8Rng {
    StreamKey::new(0x22, 0, Purpose::Aux, i).rng()
}

fn objective(family: Family, nu: f64, scale: f64, anchors: Vec<Matrix>) -> HolderObjective {
    let comps = anchors
        .into_iter()
        .map(|a| match family {
            Family::PoweredDistance => ComponentSpec::powered_distance(a, scale, nu),
            Family::GemanMcClure => ComponentSpec::geman_mcclure(a, scale),
        })
        .collect();
    HolderObjective::new(comps).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng(1);
    let cases = [
        (Family::PoweredDistance, 1.0),
        (Family::PoweredDistance, 0.5),
        (Family::PoweredDistance, 0.3),
        (Family::GemanMcClure, 1.0),
    ];
    let mut checked = 0;
    for (family, nu) in cases {
        let anchors = (0..3).map(|_| gaussian(3, 2, &mut r)).collect();
        let obj = objective(family, nu, 0.7, anchors);
        for _ in 0..250 {
            let i = r.random_range(0..obj.len());
            let w = gaussian(3, 2, &mut r).scale(2.0);
            let anchor = &obj.components()[i].anchor;
            if w.sub(anchor).unwrap().as_slice().iter().any(|d| d.abs() <= 1e-3) {
                continue;
            }
            let g = obj.grad_component(i, &w).unwrap();
            for k in 0..6 {
                let (row, col) = (k / 2, k % 2);
                let x = w[(row, col)];
                let h = 1e-6 * (1.0 + x.abs());
                let mut wp = w.clone();
                wp[(row, col)] = x + h;
                let mut wm = w.clone();
                wm[(row, col)] = x - h;
                let fd = (obj.eval_component(i, &wp).unwrap() - obj.eval_component(i, &wm).unwrap()) / (2.0 * h);
                let an = g[(row, col)];
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs() + 1e-8,
                    "{family:?} nu={nu}: fd {fd} vs {an}"
                );
            }
            checked += 1;
        }
    }
    assert!(checked >= 900, "only {checked} points away from kinks");
}

#[test]
fn full_objective_is_component_mean() {
    let mut r = rng(2);
    let anchors: Vec<Matrix> = (0..3).map(|_| gaussian(2, 3, &mut r)).collect();
    let obj = objective(Family::PoweredDistance, 0.5, 1.3, anchors);
    let w = gaussian(2, 3, &mut r);
    let mut acc = Matrix::zeros(2, 3);
    let mut f = 0.0;
    for i in 0..3 {
        acc.add_assign(&obj.grad_component(i, &w).unwrap()).unwrap();
        f += obj.eval_component(i, &w).unwrap();
    }
    let want = acc.map(|x| x / 3.0);
    assert_eq!(obj.grad_full(&w).unwrap(), want);
    assert!((obj.eval_full(&w).unwrap() - f / 3.0).abs() < 1e-15);

    let single = objective(Family::GemanMcClure, 1.0, 2.0, vec![gaussian(2, 3, &mut r)]);
    assert_eq!(single.eval_full(&w).unwrap(), single.eval_component(0, &w).unwrap());
    assert_eq!(single.grad_full(&w).unwrap(), single.grad_component(0, &w).unwrap());

    let a = gaussian(2, 3, &mut r);
    let same = objective(Family::PoweredDistance, 0.7, 1.0, vec![a.clone(), a.clone()]);
    assert_eq!(same.eval_full(&a).unwrap(), 0.0);
    assert!(same.grad_full(&a).unwrap().is_zero());
}

#[test]
fn shape_mismatch_is_an_error() {
    let obj = objective(Family::PoweredDistance, 1.0, 1.0, vec![Matrix::zeros(2, 2)]);
    assert!(obj.eval_full(&Matrix::zeros(2, 3)).is_err());
    assert!(obj.grad_component(0, &Matrix::zeros(3, 2)).is_err());
}

// Dense scan of |φ(x) - φ(y)| / |x - y|^ν for φ(x) = sign(x)|x|^ν.
fn scalar_holder_scan(nu: f64) -> f64 {
    let phi = |x: f64| x.signum() * x.abs().powf(nu);
    let grid: Vec<f64> = (-400..=400).map(|k| k as f64 / 100.0).collect();
    let mut best: f64 = 0.0;
    for &x in &grid {
        for &y in &grid {
            if x != y {
                best = best.max((phi(x) - phi(y)).abs() / (x - y).abs().powf(nu));
            }
        }
    }
    best
}

// Max |ρ''| of ρ(x) = x²/(1+x²) on a dense grid.
fn geman_mcclure_curvature_scan() -> f64 {
    (-20000..=20000)
        .map(|k| {
            let x = k as f64 / 1000.0;
            let q = 1.0 + x * x;
            (2.0 * (1.0 - 3.0 * x * x) / (q * q * q)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn scalar_holder_constants() {
    let scan = scalar_holder_scan(0.5);
    assert!((scan - 2f64.sqrt()).abs() < 1e-9);
    assert!((geman_mcclure_curvature_scan() - 2.0).abs() < 1e-12);

    let one = |family, nu| objective(family, nu, 1.0, vec![Matrix::zeros(1, 1)]);
    let mut r = rng(3);
    let pd1 = one(Family::PoweredDistance, 1.0)
        .holder_ratio_probe(0, 10_000, &mut r)
        .unwrap();
    assert!(pd1 <= 1.0 + 1e-9);
    let pd5 = one(Family::PoweredDistance, 0.5)
        .holder_ratio_probe(0, 10_000, &mut r)
        .unwrap();
    assert!(pd5 <= scan * (1.0 + 1e-9));
    let gm = one(Family::GemanMcClure, 1.0)
        .holder_ratio_probe(0, 10_000, &mut r)
        .unwrap();
    assert!(gm <= 2.0 * (1.0 + 1e-9));
}

#[test]
fn declared_constants_survive_probing() {
    let mut r = rng(4);
    for (family, nu) in [
        (Family::PoweredDistance, 1.0),
        (Family::PoweredDistance, 0.5),
        (Family::PoweredDistance, 0.2),
        (Family::GemanMcClure, 1.0),
    ] {
        let anchors = (0..2).map(|_| gaussian(4, 3, &mut r)).collect();
        let obj = objective(family, nu, 0.8, anchors);
        for i in 0..obj.len() {
            let ratio = obj.holder_ratio_probe(i, 10_000, &mut r).unwrap();
            let declared = obj.declared_l()[i];
            assert!(
                ratio <= declared * (1.0 + 1e-6),
                "{family:?} {nu}: {ratio} > {declared}"
            );
        }
    }
}

#[test]
fn index_sampling_bound_values() {
    let c = SigmaBoundInputs {
        f_star: 0.0,
        f_starstar: 1.0,
        l: 1.0,
        nu: 0.5,
    };
    // hand evaluation: 2/(2-1) + 0.5/(1.5 (2-1)) = 7/3
    let want = (7.0f64 / 3.0).powf(0.75);
    assert!((index_sampling_sigma_p(&[c], 1.5).unwrap() - want).abs() < 1e-14);

    // independent re-implementation on random inputs
    let mut r = rng(5);
    for _ in 0..100 {
        let n = r.random_range(1..6);
        let p = r.random_range(1.01..2.0);
        let inputs: Vec<SigmaBoundInputs> = (0..n)
            .map(|_| {
                let nu = r.random_range(0.05..1.0);
                // L < 2 L^ν  <=>  L^{1-ν} < 2
                let lmax = 2f64.powf(1.0 / (1.0 - nu)).min(50.0);
                let f_star = r.random_range(-1.0..1.0);
                SigmaBoundInputs {
                    f_star,
                    f_starstar: f_star + r.random_range(0.0..3.0),
                    l: r.random_range(0.01..lmax * 0.99),
                    nu,
                }
            })
            .collect();
        let mut inner = 0.0;
        for c in &inputs {
            let d = 2.0 * c.l.powf(c.nu) - c.l;
            inner += 2.0 * c.l.powf(1.0 + c.nu) * (c.f_starstar - c.f_star) / d;
            inner += (1.0 - c.nu) * c.l / ((1.0 + c.nu) * d);
        }
        let want = (inner / n as f64).sqrt().powf(p);
        let got = index_sampling_sigma_p(&inputs, p).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn index_sigma_bounds_observed_variance() {
    use muon_lab_core::noise::{GradientOracle, NoiseModel, Sampling};
    let mut r = rng(6);
    for family in [Family::PoweredDistance, Family::GemanMcClure] {
        let anchors = (0..4).map(|_| gaussian(3, 2, &mut r)).collect();
        let obj = objective(family, 1.0, 0.6, anchors);
        let oracle = GradientOracle::new(&obj, Sampling::IndexDuN, NoiseModel::none(1.5)).unwrap();
        let sigma_p = oracle.sigma_p().unwrap();
        for _ in 0..20 {
            let w = gaussian(3, 2, &mut r).scale(3.0);
            let full = obj.grad_full(&w).unwrap();
            let exact: f64 = (0..obj.len())
                .map(|i| {
                    obj.grad_component(i, &w)
                        .unwrap()
                        .sub(&full)
                        .unwrap()
                        .frobenius_norm()
                        .powf(1.5)
                })
                .sum::<f64>()
                / obj.len() as f64;
            assert!(exact <= sigma_p * (1.0 + 1e-12), "{family:?}: {exact} > {sigma_p}");
        }
    }
}

proptest! {
    #[test]
    fn values_nonnegative_and_bounded(
        entries in proptest::collection::vec(-50.0f64..50.0, 6),
        anchor in proptest::collection::vec(-5.0f64..5.0, 6),
        nu in 0.05f64..=1.0,
        scale in 0.01f64..10.0,
    ) {
        let w = Matrix::from_vec(2, 3, entries).unwrap();
        let a = Matrix::from_vec(2, 3, anchor).unwrap();
        let pd = HolderObjective::new(vec![ComponentSpec::powered_distance(a.clone(), scale, nu)]).unwrap();
        prop_assert!(pd.eval_full(&w).unwrap() >= 0.0);
        prop_assert_eq!(pd.eval_full(&a).unwrap(), 0.0);
        let gm = HolderObjective::new(vec![ComponentSpec::geman_mcclure(a.clone(), scale)]).unwrap();
        let v = gm.eval_full(&w).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= scale * 6.0);
        prop_assert_eq!(gm.eval_full(&a).unwrap(), 0.0);
    }
}
