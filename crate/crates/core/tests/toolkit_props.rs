use std::sync::Arc;

use bspde_lab::toolkit::phi::{branch_mismatch, inner_branch};
use bspde_lab::toolkit::{backward_gronwall, check_g_bounds, check_phi_properties, lp_to_linf, NonlinearitySpec, TruncationFamily};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(cases) }
}

#[test]
fn outer_branch_worked_value() {
    let fam = TruncationFamily::new(2.0, 4.0).unwrap();
    // 4*6*1 + 4*8*1 + 16 from the quadratic continuation at r = 2
    assert_eq!(fam.eval(3.0, 0), 72.0);
    assert_eq!(TruncationFamily::new(2.0, 2.0).unwrap().eval(3.0, 0), 9.0);
}

#[test]
fn uniform_sweep_on_wide_interval() {
    let fam = TruncationFamily::new(5.0, 4.0).unwrap();
    let sample: Vec<f64> = (0..10_000).map(|i| -20.0 + 40.0 * (i as f64 + 0.5) / 10_000.0).collect();
    let rep = check_phi_properties(&fam, &sample).unwrap();
    assert!(rep.passed, "{:?}", rep.failures());
}

#[test]
fn two_point_bound_sweep_for_mixed_polynomial() {
    let spec = NonlinearitySpec::polynomial(&[0.0, 0.0, 1.0, 1.0], (-2.0, 2.0)).unwrap();
    let pairs: Vec<(f64, f64)> = (0..1000)
        .map(|i| {
            let u = (i as f64 * 0.618_033_988_749_895).fract();
            let v = (i as f64 * 0.414_213_562_373_095).fract();
            (-2.0 + 4.0 * u, -2.0 + 4.0 * v)
        })
        .collect();
    assert!(check_g_bounds(&spec, &pairs).unwrap().passed);
    let square = NonlinearitySpec::polynomial(&[0.0, 0.0, 1.0], (-2.0, 2.0)).unwrap();
    let rep = check_g_bounds(&square, &[(0.5, 0.5), (-1.0, 2.0)]).unwrap();
    assert_eq!(rep.m, 2.0);
    assert!((rep.max_abs_g - 1.0).abs() < 1e-14);
}

#[test]
fn rare_spike_still_dominates() {
    let est = lp_to_linf(&[1.0, 10.0], &[1.0 - 1e-6, 1e-6], &[2.0, 8.0, 64.0, 512.0, 4096.0]).unwrap();
    assert!(est.monotone);
    assert!(est.norms.windows(2).all(|w| w[0] <= w[1]));
    assert!(est.relative_gap < 0.01);
}

fn family(choice: usize, coeffs: &[f64]) -> NonlinearitySpec {
    let i = (-1.0, 1.0);
    match choice {
        0 => NonlinearitySpec::with_derivatives(Arc::new(f64::sin), Arc::new(f64::cos), Arc::new(|s: f64| -s.sin()), i).unwrap(),
        1 => NonlinearitySpec::with_derivatives(Arc::new(f64::exp_m1), Arc::new(f64::exp), Arc::new(f64::exp), i).unwrap(),
        _ => {
            let mut c = vec![0.0];
            c.extend_from_slice(coeffs);
            NonlinearitySpec::polynomial(&c, i).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn branches_match_to_second_order(n in 0.1f64..20.0, p in 2.0f64..9.0) {
        let fam = TruncationFamily::new(n, p).unwrap();
        for m in branch_mismatch(&fam) {
            prop_assert!(m <= 1e-10, "mismatch {m} at n={n}, p={p}");
        }
    }

    #[test]
    fn derivatives_agree_with_central_differences(n in 0.5f64..5.0, p in 2.0f64..6.0, rs in prop::collection::vec(-15.0f64..15.0, 16)) {
        let fam = TruncationFamily::new(n, p).unwrap();
        let h = 1e-5;
        for &r in &rs {
            if (r.abs() - n).abs() < 1e-3 || r.abs() < 1e-2 {
                continue;
            }
            let d1 = (fam.eval(r + h, 0) - fam.eval(r - h, 0)) / (2.0 * h);
            let d2 = (fam.eval(r + h, 1) - fam.eval(r - h, 1)) / (2.0 * h);
            let (a1, a2) = (fam.eval(r, 1), fam.eval(r, 2));
            prop_assert!((d1 - a1).abs() <= 1e-6 * (1.0 + a1.abs()));
            prop_assert!((d2 - a2).abs() <= 1e-6 * (1.0 + a2.abs()));
        }
    }

    #[test]
    fn pointwise_limits_are_exact(r in -30.0f64..30.0, p in 2.0f64..7.0, extra in 0.001f64..50.0) {
        let fam = TruncationFamily::new(r.abs() + extra, p).unwrap();
        for order in 0..3u8 {
            prop_assert_eq!(fam.eval(r, order), inner_branch(r, p, order));
        }
        let a = r.abs();
        let closed = [a.powf(p), p * a.powf(p - 2.0) * r, p * (p - 1.0) * a.powf(p - 2.0)];
        for (order, c) in closed.iter().enumerate() {
            let v = fam.eval(r, order as u8);
            prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1e-300), "order {order}: {v} vs {c}");
        }
    }

    #[test]
    fn truncation_inequalities_hold(n in 0.1f64..10.0, p in 2.0f64..8.0, sample in prop::collection::vec(-40.0f64..40.0, 200)) {
        let fam = TruncationFamily::new(n, p).unwrap();
        let rep = check_phi_properties(&fam, &sample).unwrap();
        prop_assert!(rep.passed, "{:?}", rep.failures());
    }

    #[test]
    fn taylor_identity_on_test_family(choice in 0usize..6, coeffs in prop::collection::vec(-1.0f64..1.0, 1..=5), s in -1.0f64..1.0) {
        let spec = family(choice, &coeffs);
        prop_assert!(spec.taylor_defect(s).abs() <= 1e-8);
    }

    #[test]
    fn discrete_gronwall_bound_is_a_fixed_point(k in 3usize..200, t in 0.1f64..3.0, a0 in 0.0f64..5.0, b0 in 0.0f64..3.0, c0 in 0.0f64..2.0) {
        let times: Vec<f64> = (0..k).map(|i| t * i as f64 / (k - 1) as f64).collect();
        let a: Vec<f64> = times.iter().map(|s| a0 * (1.0 + 0.5 * (3.0 * s).sin())).collect();
        let b = vec![b0; k];
        let c: Vec<f64> = times.iter().map(|s| c0 * (1.0 + 0.3 * s.cos())).collect();
        let first = backward_gronwall(&times, &vec![0.0; k], &a, &b, &c).unwrap();
        let again = backward_gronwall(&times, &first.discrete_bound, &a, &b, &c).unwrap();
        prop_assert!(again.hypothesis_holds, "margin {}", again.worst_margin);
        prop_assert!(again.below_discrete_bound);
    }
}
