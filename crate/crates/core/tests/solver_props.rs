mod common;

use bspde_lab::estimates::{energy_report, linf_report, lp_report};
use bspde_lab::ito::stochastic_integral_check;
use bspde_lab::solver::weak_residual;
use bspde_lab::toolkit::fit_line;
use bspde_lab::{solve_linear, AdaptedField, CoefficientSet, Discretization, LevelSlice, ProblemData, ScenarioTree};
use common::{deterministic_field, random_instance, rng};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(cases) }
}

/// Backward implicit Euler for the deterministic heat equation, Thomas sweep written out.
fn heat_oracle(disc: &Discretization, dt: f64, alpha: &[Vec<f64>], source: &[Vec<f64>], terminal: &[f64]) -> Vec<Vec<f64>> {
    let m = disc.m();
    let h = disc.h();
    let off = -dt / (h * h);
    let mut out = vec![terminal.to_vec()];
    for n in (0..alpha.len()).rev() {
        let prev = out.last().unwrap();
        let rhs: Vec<f64> = (0..m).map(|j| prev[j] + dt * source[n][j]).collect();
        let diag: Vec<f64> = (0..m).map(|j| 1.0 + 2.0 * dt / (h * h) - dt * alpha[n][j]).collect();
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        let mut b = diag[0];
        cp[0] = off / b;
        dp[0] = rhs[0] / b;
        for j in 1..m {
            b = diag[j] - off * cp[j - 1];
            cp[j] = off / b;
            dp[j] = (rhs[j] - off * dp[j - 1]) / b;
        }
        let mut y = dp;
        for j in (0..m - 1).rev() {
            y[j] -= cp[j] * y[j + 1];
        }
        out.push(y);
    }
    out.reverse();
    out
}

#[test]
fn zero_data_zero_solution_and_trivial_reports() {
    let tree = ScenarioTree::build(5, 1.0, false).unwrap();
    let disc = Discretization::new(7, 1.0).unwrap();
    let data = ProblemData::zero(&tree, &disc);
    let coeffs = CoefficientSet::zero(&tree, &disc);
    let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
    assert_eq!(sol.y.sup_norm(), 0.0);
    assert_eq!(sol.z.sup_norm(), 0.0);
    let e = energy_report(&tree, &disc, &sol, &data, 1.0).unwrap().report;
    assert_eq!((e.lhs, e.rhs, e.passed), (0.0, 0.0, true));
    for p in [2.0, 3.0, 6.0] {
        let l = lp_report(&tree, &disc, &sol, &data, p, 1.0).unwrap().report;
        assert_eq!((l.lhs, l.rhs, l.passed), (0.0, 0.0, true));
    }
    let s = linf_report(&tree, &sol, &coeffs, &data).report;
    assert_eq!((s.lhs, s.rhs, s.passed), (0.0, 0.0, true));
}

#[test]
fn heat_decay_respects_maximum_principle() {
    let tree = ScenarioTree::build(8, 1.0, true).unwrap();
    let disc = Discretization::new(16, 1.0).unwrap();
    let yt = LevelSlice::broadcast(&tree, 8, &disc.sine_mode(1));
    let data = ProblemData::new(&tree, &disc, yt.clone(), AdaptedField::zeros(&tree, 16, 8)).unwrap();
    let coeffs = CoefficientSet::zero(&tree, &disc);
    let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
    let rho = 1.0 / (1.0 - tree.dt() * disc.eigenvalue(1));
    assert_eq!(sol.y.sup_norm(), yt.sup_norm());
    assert!((sol.y.level(0).sup_norm() - rho.powi(8) * yt.sup_norm()).abs() < 1e-14);
    assert!(linf_report(&tree, &sol, &coeffs, &data).report.passed);
}

#[test]
fn lp_constants_grow_at_most_affinely_in_log() {
    // log C(p) over p in {2, 4, 8}: the slope may not steepen with p.
    for seed in 0..20 {
        let r = random_instance(500 + seed, 8, false, 16, 1.0, 1.0, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let ps = [2.0, 4.0, 8.0];
        let logs: Vec<f64> = ps
            .iter()
            .map(|&p| lp_report(&r.tree, &r.disc, &sol, &r.data, p, 1.0).unwrap().report.implied_constant.ln())
            .collect();
        let early = (logs[1] - logs[0]) / 2.0;
        let late = (logs[2] - logs[1]) / 4.0;
        assert!(late <= early.max(0.0) + 1e-9, "seed {seed}: slopes {early} then {late}");
        let fit = fit_line(&ps, &logs).unwrap();
        assert!(fit.slope.is_finite());
    }
}

proptest! {
    #![proptest_config(cfg(24))]

    #[test]
    fn manufactured_affine_pairs_are_exact(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0, mode in 1usize..4) {
        let mut r = rng(seed);
        let tree = ScenarioTree::build(8, 1.0, true).unwrap();
        let disc = Discretization::new(16, 1.0).unwrap();
        let alpha = deterministic_field(&mut r, &tree, 16, 1.0);
        let beta = deterministic_field(&mut r, &tree, 16, 1.0);
        let s = disc.sine_mode(mode);
        let lap = disc.apply_laplacian(&s).unwrap();
        let ystar = |n: usize, k: usize, j: usize| (a + b * tree.brownian(n, k)) * s[j];
        let source = AdaptedField::from_fn(&tree, 16, 8, |n, k, j| {
            let c = a + b * tree.brownian(n, k);
            -(c * lap[j]) - alpha.level(n).node(k)[j] * c * s[j] - beta.level(n).node(k)[j] * b * s[j]
        });
        let yt = LevelSlice::from_fn(&tree, 8, 16, |k, j| ystar(8, k, j));
        let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta).unwrap();
        let data = ProblemData::new(&tree, &disc, yt, source).unwrap();
        let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
        for n in 0..=8 {
            for k in 0..tree.node_count(n) {
                for j in 0..16 {
                    prop_assert!((sol.y.level(n).node(k)[j] - ystar(n, k, j)).abs() <= 1e-10);
                    if n < 8 {
                        prop_assert!((sol.z.level(n).node(k)[j] - b * s[j]).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_data_matches_heat_oracle(seed in 0u64..10_000, levels in 1usize..10, m in 2usize..24, with_beta in any::<bool>()) {
        let mut r = rng(seed);
        let tree = ScenarioTree::build(levels, 1.0, seed % 2 == 0).unwrap();
        let disc = Discretization::new(m, 1.0).unwrap();
        let alpha = deterministic_field(&mut r, &tree, m, 1.0);
        let beta = if with_beta { deterministic_field(&mut r, &tree, m, 1.0) } else { AdaptedField::zeros(&tree, m, levels) };
        let source = deterministic_field(&mut r, &tree, m, 1.0);
        let yt: Vec<f64> = (0..m).map(|j| (j as f64 * 0.7).cos()).collect();
        let a_rows: Vec<Vec<f64>> = (0..levels).map(|n| alpha.level(n).node(0).to_vec()).collect();
        let f_rows: Vec<Vec<f64>> = (0..levels).map(|n| source.level(n).node(0).to_vec()).collect();
        let oracle = heat_oracle(&disc, tree.dt(), &a_rows, &f_rows, &yt);
        let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta).unwrap();
        let data = ProblemData::new(&tree, &disc, LevelSlice::broadcast(&tree, levels, &yt), source).unwrap();
        let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
        prop_assert_eq!(sol.z.sup_norm(), 0.0);
        for n in 0..=levels {
            for k in 0..tree.node_count(n) {
                if with_beta {
                    for j in 0..m {
                        prop_assert!((sol.y.level(n).node(k)[j] - oracle[n][j]).abs() <= 1e-14 * (1.0 + oracle[n][j].abs()));
                    }
                } else {
                    prop_assert_eq!(sol.y.level(n).node(k), &oracle[n][..]);
                }
            }
        }
    }

    #[test]
    fn weak_form_and_martingale_law_hold(seed in 0u64..10_000, levels in 1usize..9, m in 2usize..20, p in prop::sample::select(vec![2.0, 3.0, 4.0])) {
        let r = random_instance(seed, levels, false, m, 1.0, 0.9, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        prop_assert!(sol.max_solve_residual() <= 1e-11);
        prop_assert_eq!(sol.y.level(levels), r.data.terminal());
        let w = weak_residual(&r.tree, &r.disc, &sol, &r.coeffs, &r.data);
        prop_assert!(w.telescoped_bound <= 1e-11, "telescoped {}", w.telescoped_bound);
        let check = stochastic_integral_check(&r.tree, &r.disc, &sol, p).unwrap();
        prop_assert!(check.expectation.abs() <= 1e-11);
        prop_assert!(check.martingale_defect.unwrap() <= 1e-11);
    }

    #[test]
    fn implied_constants_are_scale_invariant(seed in 0u64..10_000, lambda in prop::sample::select(vec![0.1, 0.5, 3.0, 10.0])) {
        let r = random_instance(seed, 6, false, 12, 1.0, 1.0, 1.0);
        let scaled = r.data.scaled(lambda);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let sol_l = solve_linear(&r.tree, &r.disc, &r.coeffs, &scaled).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-300);
        let e = energy_report(&r.tree, &r.disc, &sol, &r.data, 1.0).unwrap().report.implied_constant;
        let el = energy_report(&r.tree, &r.disc, &sol_l, &scaled, 1.0).unwrap().report.implied_constant;
        prop_assert!(rel(e, el) <= 1e-9);
        for p in [2.0, 4.0, 8.0] {
            let c = lp_report(&r.tree, &r.disc, &sol, &r.data, p, 1.0).unwrap().report.implied_constant;
            let cl = lp_report(&r.tree, &r.disc, &sol_l, &scaled, p, 1.0).unwrap().report.implied_constant;
            prop_assert!(rel(c, cl) <= 1e-9);
        }
        let s = linf_report(&r.tree, &sol, &r.coeffs, &r.data).report.implied_constant;
        let sl = linf_report(&r.tree, &sol_l, &r.coeffs, &scaled).report.implied_constant;
        prop_assert!(rel(s, sl) <= 1e-9);
    }

    #[test]
    fn p2_lp_report_is_the_energy_report(seed in 0u64..10_000) {
        let r = random_instance(seed, 6, false, 12, 1.0, 1.0, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let e = energy_report(&r.tree, &r.disc, &sol, &r.data, 1.0).unwrap();
        let l = lp_report(&r.tree, &r.disc, &sol, &r.data, 2.0, 1.0).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-300);
        prop_assert!(rel(e.report.implied_constant, l.report.implied_constant) <= 1e-10);
        prop_assert!(rel(e.sup_term, l.sup_term) <= 1e-10);
    }

    #[test]
    fn sup_bound_holds_on_unit_coefficients(seed in 0u64..10_000) {
        let r = random_instance(seed, 8, false, 16, 1.0, 1.0, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let rep = linf_report(&r.tree, &sol, &r.coeffs, &r.data);
        prop_assert!(rep.report.passed);
        prop_assert!(rep.report.lhs <= (2.0f64).exp() * (r.data.terminal().sup_norm() + r.data.source().sup_norm()));
    }
}
