mod common;

use bspde_lab::ito::{energy_consistency_defect, ito_residual, phi_identity_check};
use bspde_lab::toolkit::{fitted_order, TruncationFamily};
use bspde_lab::{solve_linear, AdaptedField, CoefficientSet, Discretization, LevelSlice, ProblemData, ScenarioTree};
use common::{deterministic_field, random_instance, rng};
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(cases) }
}

/// y* = b W sin(pi x) with the source that cancels the drift.
fn affine_instance(levels: usize, b: f64, seed: u64) -> (ScenarioTree, Discretization, CoefficientSet, ProblemData) {
    let mut r = rng(seed);
    let tree = ScenarioTree::build(levels, 1.0, true).unwrap();
    let disc = Discretization::new(16, 1.0).unwrap();
    let alpha = deterministic_field(&mut r, &tree, 16, 0.5);
    let beta = deterministic_field(&mut r, &tree, 16, 0.5);
    let s = disc.sine_mode(1);
    let lap = disc.apply_laplacian(&s).unwrap();
    let source = AdaptedField::from_fn(&tree, 16, levels, |n, k, j| {
        let c = b * tree.brownian(n, k);
        -(c * lap[j]) - alpha.level(n).node(k)[j] * c * s[j] - beta.level(n).node(k)[j] * b * s[j]
    });
    let yt = LevelSlice::from_fn(&tree, levels, 16, |k, j| b * tree.brownian(levels, k) * s[j]);
    let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta).unwrap();
    let data = ProblemData::new(&tree, &disc, yt, source).unwrap();
    (tree, disc, coeffs, data)
}

#[test]
fn quartic_residual_on_affine_pair_is_closed_form() {
    for levels in [4, 8, 16] {
        for b in [0.5, 1.0, 1.7] {
            let (tree, disc, coeffs, data) = affine_instance(levels, b, levels as u64);
            let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
            let rep = ito_residual(&tree, &disc, &sol, &coeffs, &data, 4.0, 0).unwrap();
            // each step leaves -h sum (b s sqrt(dt))^4 after the quadratic terms cancel
            let s4: f64 = disc.sine_mode(1).iter().map(|v| v.powi(4)).sum();
            let closed = -tree.horizon() * tree.dt() * b.powi(4) * disc.h() * s4;
            assert!((rep.expected_residual - closed).abs() <= 1e-9, "{} vs {closed}", rep.expected_residual);
            let quad = ito_residual(&tree, &disc, &sol, &coeffs, &data, 2.0, 0).unwrap();
            assert!(quad.expected_residual.abs() <= 1e-9);
        }
    }
}

/// Smooth data on a long domain so the coarsest level is already asymptotic.
fn smooth_instance(levels: usize) -> (ScenarioTree, Discretization, CoefficientSet, ProblemData) {
    let tree = ScenarioTree::build(levels, 1.0, true).unwrap();
    let disc = Discretization::new(16, 8.0).unwrap();
    let k = std::f64::consts::PI / 8.0;
    let alpha = AdaptedField::from_fn(&tree, 16, levels, |_, _, j| 0.3 * (k * disc.x(j)).cos());
    let beta = AdaptedField::from_fn(&tree, 16, levels, |n, _, j| 0.3 * (k * disc.x(j)).sin() * (-tree.time(n)).exp());
    let source = AdaptedField::from_fn(&tree, 16, levels, |n, c, j| 0.5 * tree.brownian(n, c).cos() * (k * disc.x(j)).sin());
    let yt = LevelSlice::from_fn(&tree, levels, 16, |c, j| (1.0 + 0.3 * tree.brownian(levels, c)) * (k * disc.x(j)).sin());
    let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta).unwrap();
    let data = ProblemData::new(&tree, &disc, yt, source).unwrap();
    (tree, disc, coeffs, data)
}

#[test]
fn truncated_residual_keeps_first_order_with_outer_branch_active() {
    let mut steps = Vec::new();
    let mut residuals = Vec::new();
    for levels in [8, 16, 32] {
        let (tree, disc, coeffs, data) = smooth_instance(levels);
        let sol = solve_linear(&tree, &disc, &coeffs, &data).unwrap();
        let fam = TruncationFamily::new(0.5 * sol.y.sup_norm(), 4.0).unwrap();
        let rep = phi_identity_check(&tree, &disc, &sol, &coeffs, &data, &fam, 0).unwrap();
        steps.push(tree.dt());
        residuals.push(rep.expected_residual.abs());
    }
    let order = fitted_order(&steps, &residuals).unwrap();
    assert!(order >= 0.9, "order {order}, residuals {residuals:?}");
}

proptest! {
    #![proptest_config(cfg(16))]

    #[test]
    fn inactive_truncation_is_bitwise_the_power_case(seed in 0u64..10_000, levels in 1usize..8, p in prop::sample::select(vec![2.0, 3.0, 4.0, 6.0])) {
        let r = random_instance(seed, levels, false, 10, 1.0, 0.9, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let fam = TruncationFamily::new(2.0 * sol.y.sup_norm() + 1.0, p).unwrap();
        for level in [0, levels / 2] {
            let plain = ito_residual(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, p, level).unwrap();
            let trunc = phi_identity_check(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, &fam, level).unwrap();
            prop_assert_eq!(plain.residual, trunc.residual);
        }
    }

    #[test]
    fn quadratic_family_ignores_the_truncation_level(seed in 0u64..10_000, n in 0.01f64..5.0) {
        let r = random_instance(seed, 6, false, 10, 1.0, 1.0, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        let plain = ito_residual(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, 2.0, 0).unwrap();
        let fam = TruncationFamily::new(n, 2.0).unwrap();
        let trunc = phi_identity_check(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, &fam, 0).unwrap();
        let scale = plain.state_term.abs() + plain.terminal_term.abs() + 1.0;
        for (a, b) in plain.residual.iter().zip(&trunc.residual) {
            prop_assert!((a - b).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn quadratic_residual_is_the_energy_defect(seed in 0u64..10_000, levels in 1usize..9, recombining in any::<bool>()) {
        let r = random_instance(seed, levels, recombining, 12, 1.0, 0.9, 1.0);
        let sol = solve_linear(&r.tree, &r.disc, &r.coeffs, &r.data).unwrap();
        for level in 0..=levels {
            let rep = ito_residual(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, 2.0, level).unwrap();
            let defect = energy_consistency_defect(&r.tree, &r.disc, &sol, &r.coeffs, &r.data, level).unwrap();
            for (a, b) in rep.residual.iter().zip(&defect) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
