//! One function per experiment kind. Each returns a JSON report, the checks
//! that make up the verdict, and its CSV tables.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::config::{
    ControlMode, EstimateCheck, ExperimentConfig, ManufacturedSpec, NonlinearityConfig, ToolkitCheck, TreeSpec,
};
use super::data::{build_grid, build_tree, Instance};
use super::expr::Env;
use super::output::{to_value, Check, Table};
use crate::control::{
    cost_blowup_study, estimate_observability, exponent_ladder, input_to_state_norm, synthesize_control, verify_control,
    ControlProblem,
};
use crate::error::{Error, Result};
use crate::estimates::{energy_report, linf_report, lp_report};
use crate::field::{AdaptedField, LevelSlice};
use crate::ito::{energy_consistency_defect, ito_residual, stochastic_integral_check};
use crate::semilinear::{picard_solve, smallness_probe, verify_semilinear, InitialGuess, PicardOptions};
use crate::solver::{solve_linear, weak_residual, CoefficientSet, ProblemData};
use crate::toolkit::{
    backward_gronwall, check_g_bounds, check_phi_properties, fitted_order, lp_to_linf, NonlinearitySpec, ScalarFn,
    TruncationFamily,
};
use crate::toolkit::phi::branch_mismatch;
use crate::tree::ScenarioTree;

pub struct CaseOutput {
    pub report: Value,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

fn expected_level(tree: &ScenarioTree, n: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    (0..tree.node_count(n)).map(|k| tree.probability(n, k) * f(k)).sum()
}

// ---------------------------------------------------------------- solve

pub fn solve(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    if let Some(man) = &cfg.solve.manufactured {
        return manufactured(cfg, man);
    }
    let inst = Instance::build(cfg, cfg.seed)?;
    let (tree, disc) = (&inst.tree, &inst.disc);
    let sol = solve_linear(tree, disc, &inst.coeffs, &inst.data)?;
    let weak = weak_residual(tree, disc, &sol, &inst.coeffs, &inst.data);
    let data_scale = inst.data.terminal().sup_norm() + inst.data.source().sup_norm();

    let mut levels = Table::new("levels", &["level", "time", "expected_l2_sq", "sup", "expected_z_l2_sq", "solve_residual"]);
    for n in 0..=tree.levels() {
        let y = sol.y.level(n);
        let (z_energy, res) = if n < tree.levels() {
            (Some(expected_level(tree, n, |k| disc.inner(sol.z.level(n).node(k), sol.z.level(n).node(k)))), Some(sol.solve_residuals[n]))
        } else {
            (None, None)
        };
        levels.push(vec![
            n.into(),
            tree.time(n).into(),
            expected_level(tree, n, |k| disc.inner(y.node(k), y.node(k))).into(),
            y.sup_norm().into(),
            z_energy.into(),
            res.into(),
        ]);
    }
    let mut initial = Table::new("initial_state", &["j", "x", "y0"]);
    let y0 = sol.y.level(0).node(0);
    for (j, v) in y0.iter().enumerate() {
        initial.push(vec![j.into(), disc.x(j).into(), (*v).into()]);
    }

    let report = json!({
        "y_sup": sol.y.sup_norm(),
        "z_sup": sol.z.sup_norm(),
        "y0_l2": disc.inner(y0, y0).sqrt(),
        "terminal_sup": inst.data.terminal().sup_norm(),
        "source_sup": inst.data.source().sup_norm(),
        "max_solve_residual": sol.max_solve_residual(),
        "weak_residual": to_value(&weak),
    });
    let checks = vec![
        Check::at_most("weak residual / max(1, data sup)", weak.telescoped_bound / data_scale.max(1.0), cfg.solve.tol),
        Check::at_most("max tridiagonal residual", sol.max_solve_residual(), cfg.solve.tol),
    ];
    Ok(CaseOutput { report, checks, tables: vec![levels, initial] })
}

/// y = (a + b W) sin(pi x / l) solves the scheme exactly for the matching source.
fn manufactured(cfg: &ExperimentConfig, man: &ManufacturedSpec) -> Result<CaseOutput> {
    let tree = build_tree(&cfg.tree)?;
    let disc = build_grid(&cfg.grid)?;
    let m = disc.m();
    let mode = disc.sine_mode(1);
    let lambda = disc.eigenvalue(1);
    let mut table = Table::new("manufactured", &["run", "a", "b", "alpha", "beta", "max_error_y", "max_error_z"]);
    let (mut worst_y, mut worst_z): (f64, f64) = (0.0, 0.0);
    for run in 0..man.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(run as u64));
        let amp = man.amplitude.abs();
        let mut draw = || if amp == 0.0 { 0.0 } else { rng.random_range(-amp..=amp) };
        let (a, b, alpha, beta) = (draw(), draw(), draw(), draw());
        let exact = |n: usize, k: usize, j: usize| (a + b * tree.brownian(n, k)) * mode[j];
        let coeffs = CoefficientSet::new(
            &tree,
            &disc,
            AdaptedField::from_fn(&tree, m, tree.levels(), |_, _, _| alpha),
            AdaptedField::from_fn(&tree, m, tree.levels(), |_, _, _| beta),
        )?;
        let source =
            AdaptedField::from_fn(&tree, m, tree.levels(), |n, k, j| -(lambda + alpha) * exact(n, k, j) - beta * b * mode[j]);
        let terminal = LevelSlice::from_fn(&tree, tree.levels(), m, |k, j| exact(tree.levels(), k, j));
        let sol = solve_linear(&tree, &disc, &coeffs, &ProblemData::new(&tree, &disc, terminal, source)?)?;
        let want = AdaptedField::from_fn(&tree, m, tree.levels() + 1, exact);
        let want_z = AdaptedField::from_fn(&tree, m, tree.levels(), |_, _, j| b * mode[j]);
        let (ey, ez) = (sol.y.max_abs_diff(&want), sol.z.max_abs_diff(&want_z));
        worst_y = worst_y.max(ey);
        worst_z = worst_z.max(ez);
        table.push(vec![run.into(), a.into(), b.into(), alpha.into(), beta.into(), ey.into(), ez.into()]);
    }
    let report = json!({ "runs": man.runs, "max_error_y": worst_y, "max_error_z": worst_z });
    let checks = vec![
        Check::at_most("max |y - y*| over nodes and runs", worst_y, cfg.solve.tol),
        Check::at_most("max |Y - Y*| over nodes and runs", worst_z, cfg.solve.tol),
    ];
    Ok(CaseOutput { report, checks, tables: vec![table] })
}

// ---------------------------------------------------------------- ito-check

pub fn ito_check(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.ito;
    let mut table = Table::new(
        "martingale",
        &["run", "run_seed", "p", "expectation", "martingale_defect", "max_abs_value", "ito_expected_residual"],
    );
    let (mut worst_e, mut worst_d): (f64, f64) = (0.0, 0.0);
    let mut residuals = Vec::new();
    for run in 0..s.runs.max(1) {
        let seed = cfg.seed.wrapping_add(run as u64);
        let inst = Instance::build(cfg, seed)?;
        let sol = solve_linear(&inst.tree, &inst.disc, &inst.coeffs, &inst.data)?;
        for &p in &s.exponents {
            let c = stochastic_integral_check(&inst.tree, &inst.disc, &sol, p)?;
            let ito = ito_residual(&inst.tree, &inst.disc, &sol, &inst.coeffs, &inst.data, p, 0)?;
            worst_e = worst_e.max(c.expectation.abs());
            if let Some(d) = c.martingale_defect {
                worst_d = worst_d.max(d);
            }
            residuals.push(ito.expected_residual);
            table.push(vec![
                run.into(),
                seed.into(),
                p.into(),
                c.expectation.into(),
                c.martingale_defect.into(),
                c.max_abs_value.into(),
                ito.expected_residual.into(),
            ]);
        }
    }
    let report = json!({
        "runs": s.runs.max(1),
        "exponents": s.exponents,
        "max_abs_expectation": worst_e,
        "max_martingale_defect": worst_d,
        "max_abs_ito_residual": residuals.iter().fold(0.0f64, |a, r| a.max(r.abs())),
    });
    let checks = vec![
        Check::at_most("max |E stochastic integral|", worst_e, s.martingale_tol),
        Check::at_most("max martingale defect of partial sums", worst_d, s.martingale_tol),
    ];
    Ok(CaseOutput { report, checks, tables: vec![table] })
}

// ---------------------------------------------------------------- convergence

pub fn convergence(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.convergence;
    if s.levels.len() < 2 {
        return Err(Error::Config("convergence.levels needs at least two tree depths".into()));
    }
    let mut table = Table::new(
        "ito_residual",
        &["levels", "dt", "p", "expected_residual", "state_term", "terminal_term", "gradient_term", "cross_term", "drift_term"],
    );
    let mut energy = Table::new("energy_defect", &["levels", "dt", "residual", "consistency_defect", "difference"]);
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); s.exponents.len()];
    let mut steps = Vec::new();
    let mut worst_energy: f64 = 0.0;
    for &levels in &s.levels {
        let tree = build_tree(&TreeSpec { levels, ..cfg.tree.clone() })?;
        let inst = Instance::with_tree(cfg, cfg.seed, tree)?;
        let (tree, disc) = (&inst.tree, &inst.disc);
        let sol = solve_linear(tree, disc, &inst.coeffs, &inst.data)?;
        steps.push(tree.dt());
        for (i, &p) in s.exponents.iter().enumerate() {
            let rep = ito_residual(tree, disc, &sol, &inst.coeffs, &inst.data, p, 0)?;
            errors[i].push(rep.expected_residual.abs());
            table.push(vec![
                levels.into(),
                tree.dt().into(),
                p.into(),
                rep.expected_residual.into(),
                rep.state_term.into(),
                rep.terminal_term.into(),
                rep.gradient_term.into(),
                rep.cross_term.into(),
                rep.drift_term.into(),
            ]);
            if p == 2.0 {
                let defect = energy_consistency_defect(tree, disc, &sol, &inst.coeffs, &inst.data, 0)?;
                let diff = rep.residual.iter().zip(&defect).fold(0.0f64, |a, (r, d)| a.max((r - d).abs()));
                worst_energy = worst_energy.max(diff);
                energy.push(vec![levels.into(), tree.dt().into(), rep.residual[0].into(), defect[0].into(), diff.into()]);
            }
        }
    }
    let mut checks = Vec::new();
    let mut orders = serde_json::Map::new();
    for (i, &p) in s.exponents.iter().enumerate() {
        let order = fitted_order(&steps, &errors[i])?;
        orders.insert(format!("{p}"), json!(order));
        checks.push(Check::at_least(format!("fitted order of the Itô residual, p = {p}"), order, s.min_order));
    }
    if s.exponents.contains(&2.0) {
        checks.push(Check::at_most("p = 2 residual minus energy consistency defect", worst_energy, s.energy_tol));
    }
    let report = json!({ "levels": s.levels, "dt": steps, "orders": orders, "max_energy_difference": worst_energy });
    let mut tables = vec![table];
    if !energy.rows.is_empty() {
        tables.push(energy);
    }
    Ok(CaseOutput { report, checks, tables })
}

// ---------------------------------------------------------------- estimates

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn estimates(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.estimates;
    let wants = |c: EstimateCheck| s.checks.contains(&c);
    let energy_margin = s.baseline_energy.unwrap_or(f64::MAX);
    let lp_margin = s.baseline_lp.unwrap_or(f64::MAX);
    let mut runs = Table::new(
        "estimates",
        &["run", "run_seed", "linf_constant", "linf_passed", "energy_constant", "p2_difference", "homogeneity_defect"],
    );
    let mut lp_table = Table::new("lp_reports", &["run", "run_seed", "p", "lhs", "rhs", "implied_constant"]);
    let mut linf_failures = 0usize;
    let (mut max_energy, mut max_lp, mut worst_p2, mut worst_hom): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut lp_by_p: Vec<f64> = vec![0.0; s.exponents.len()];

    for run in 0..s.runs.max(1) {
        let seed = cfg.seed.wrapping_add(run as u64);
        let inst = Instance::build(cfg, seed)?;
        let (tree, disc) = (&inst.tree, &inst.disc);
        let sol = solve_linear(tree, disc, &inst.coeffs, &inst.data)?;
        let linf = linf_report(tree, &sol, &inst.coeffs, &inst.data);
        if !linf.report.passed {
            linf_failures += 1;
        }

        let (mut energy_c, mut p2_diff) = (f64::NAN, f64::NAN);
        if wants(EstimateCheck::Energy) {
            let e = energy_report(tree, disc, &sol, &inst.data, energy_margin)?;
            let l2 = lp_report(tree, disc, &sol, &inst.data, 2.0, energy_margin)?;
            energy_c = e.report.implied_constant;
            p2_diff = rel_diff(e.report.lhs, l2.report.lhs).max(rel_diff(e.report.rhs, l2.report.rhs));
            max_energy = max_energy.max(energy_c);
            worst_p2 = worst_p2.max(p2_diff);
        }
        let mut lp_constants = Vec::new();
        if wants(EstimateCheck::Lp) {
            for (i, &p) in s.exponents.iter().enumerate() {
                let r = lp_report(tree, disc, &sol, &inst.data, p, lp_margin)?;
                lp_by_p[i] = lp_by_p[i].max(r.report.implied_constant);
                max_lp = max_lp.max(r.report.implied_constant);
                lp_constants.push(r.report.implied_constant);
                lp_table.push(vec![
                    run.into(),
                    seed.into(),
                    p.into(),
                    r.report.lhs.into(),
                    r.report.rhs.into(),
                    r.report.implied_constant.into(),
                ]);
            }
        }

        let mut hom = f64::NAN;
        if wants(EstimateCheck::Homogeneity) {
            hom = 0.0;
            for &lambda in &s.scalings {
                let data = inst.data.scaled(lambda);
                let sl = solve_linear(tree, disc, &inst.coeffs, &data)?;
                let l = linf_report(tree, &sl, &inst.coeffs, &data);
                hom = hom.max(rel_diff(l.report.implied_constant, linf.report.implied_constant));
                if wants(EstimateCheck::Energy) {
                    let e = energy_report(tree, disc, &sl, &data, energy_margin)?;
                    hom = hom.max(rel_diff(e.report.implied_constant, energy_c));
                }
                if wants(EstimateCheck::Lp) {
                    for (i, &p) in s.exponents.iter().enumerate() {
                        let r = lp_report(tree, disc, &sl, &data, p, lp_margin)?;
                        hom = hom.max(rel_diff(r.report.implied_constant, lp_constants[i]));
                    }
                }
            }
            worst_hom = worst_hom.max(hom);
        }
        runs.push(vec![
            run.into(),
            seed.into(),
            linf.report.implied_constant.into(),
            linf.report.passed.into(),
            energy_c.into(),
            p2_diff.into(),
            hom.into(),
        ]);
    }

    let mut checks = Vec::new();
    if wants(EstimateCheck::Linf) {
        checks.push(Check::at_most("sup-norm bound failures", linf_failures as f64, 0.0));
    }
    if wants(EstimateCheck::Homogeneity) {
        checks.push(Check::at_most("implied constants under data scaling (relative)", worst_hom, s.homogeneity_tol));
    }
    if wants(EstimateCheck::Energy) {
        checks.push(Check::at_most("max energy implied constant", max_energy, energy_margin));
        checks.push(Check::at_most("p = 2 report vs energy report (relative)", worst_p2, s.p2_tol));
    }
    if wants(EstimateCheck::Lp) {
        checks.push(Check::at_most("max L^p implied constant", max_lp, lp_margin));
    }
    let lp_max: serde_json::Map<String, Value> =
        s.exponents.iter().zip(&lp_by_p).map(|(p, c)| (format!("{p}"), json!(c))).collect();
    let report = json!({
        "runs": s.runs.max(1),
        "linf_failures": linf_failures,
        "max_energy_constant": max_energy,
        "max_lp_constant": lp_max,
        "max_p2_difference": worst_p2,
        "max_homogeneity_defect": worst_hom,
    });
    let mut tables = vec![runs];
    if !lp_table.rows.is_empty() {
        tables.push(lp_table);
    }
    Ok(CaseOutput { report, checks, tables })
}

// ---------------------------------------------------------------- control

fn control_problem(cfg: &ExperimentConfig, tree: ScenarioTree, p: f64) -> Result<ControlProblem> {
    if cfg.source != super::config::FieldSpec::Zero {
        return Err(Error::Config("control experiments take no source; remove `source`".into()));
    }
    let inst = Instance::with_tree(cfg, cfg.seed, tree)?;
    let terminal = inst.data.terminal().clone();
    let mut pb = ControlProblem::from_coefficients(inst.tree, inst.disc, inst.coeffs, terminal, p)?;
    let s = &cfg.control;
    pb.measurability = s.measurability;
    pb.y0_tol = s.y0_tol;
    pb.max_iter = s.max_iter;
    pb.step_tol = s.step_tol;
    Ok(pb)
}

/// Least-norm control from the explicit input matrix and an SVD pseudoinverse.
pub fn dense_least_norm(problem: &ControlProblem) -> Result<(AdaptedField, f64)> {
    let (tree, disc) = (problem.tree(), problem.disc());
    let m = disc.m();
    let mut vars = Vec::new();
    for n in 0..tree.levels() {
        for k in 0..tree.node_count(n) {
            for j in (0..m).filter(|&j| disc.mask()[j]) {
                vars.push((n, k, j));
            }
        }
    }
    let zero = problem.zero_control();
    let free = problem.initial_state(problem.terminal(), &zero)?;
    let no_terminal = problem.zero_terminal();
    let mut b = DMatrix::zeros(m, vars.len());
    let mut scale = Vec::with_capacity(vars.len());
    for (c, &(n, k, j)) in vars.iter().enumerate() {
        let mut h = zero.clone();
        h.level_mut(n).node_mut(k)[j] = 1.0;
        let y0 = problem.initial_state(&no_terminal, &h)?;
        let w = (tree.dt() * tree.probability(n, k) * disc.h()).sqrt();
        scale.push(w);
        for (i, v) in y0.iter().enumerate() {
            b[(i, c)] = v / w;
        }
    }
    let svd = b.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max();
    let pinv = svd.pseudo_inverse(eps).map_err(|e| Error::Solver(format!("pseudoinverse failed: {e}")))?;
    let v = pinv * DVector::from_iterator(m, free.iter().map(|x| -x));
    let mut h = zero;
    for (c, &(n, k, j)) in vars.iter().enumerate() {
        h.level_mut(n).node_mut(k)[j] = v[c] / scale[c];
    }
    let y0 = problem.initial_state(problem.terminal(), &h)?;
    Ok((h, disc.inner(&y0, &y0).sqrt()))
}

pub fn control(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.control;
    match s.mode {
        ControlMode::Synthesize => synthesize(cfg),
        ControlMode::Ladder => {
            let problem = control_problem(cfg, build_tree(&cfg.tree)?, 2.0)?;
            let rep = exponent_ladder(&problem, &s.exponents)?;
            let mut table = Table::new("ladder", &["p", "cost_p", "cost_inf", "y0_residual", "converged"]);
            for e in rep.entries.iter().chain(std::iter::once(&rep.lp)) {
                table.push(vec![e.p.into(), e.cost_p.into(), e.cost_inf.into(), e.y0_residual.into(), e.converged.into()]);
            }
            let checks = vec![
                Check::at_most("p = inf y(0) residual", rep.lp.y0_residual, s.y0_tol),
                Check::holds("every finite-p synthesis converged", rep.entries.iter().all(|e| e.converged)),
                Check::holds("LP sup cost is minimal", rep.lp_is_minimal),
                Check::holds("sup costs non-increasing in p", rep.sup_costs_non_increasing),
            ];
            Ok(CaseOutput { report: to_value(&rep), checks, tables: vec![table] })
        }
        ControlMode::Blowup => {
            let p = s.p.0;
            let rep = cost_blowup_study(&s.horizons, |t| {
                control_problem(cfg, build_tree(&TreeSpec { horizon: t, ..cfg.tree.clone() })?, p)
            })?;
            let mut table = Table::new("cost_blowup", &["horizon", "inverse_horizon", "cost", "y0_residual", "converged"]);
            for i in 0..rep.horizons.len() {
                let t = rep.horizons[i];
                table.push(vec![t.into(), (1.0 / t).into(), rep.costs[i].into(), rep.y0_residuals[i].into(), rep.converged[i].into()]);
            }
            let checks = vec![
                Check::holds("every synthesis converged", rep.complete),
                Check::holds("cost strictly decreasing in T", rep.strictly_decreasing),
                Check::at_least("slope of log cost against 1/T", rep.slope.unwrap_or(f64::NAN), 0.0),
            ];
            Ok(CaseOutput { report: to_value(&rep), checks, tables: vec![table] })
        }
        ControlMode::Observability => {
            let problem = control_problem(cfg, build_tree(&cfg.tree)?, 2.0)?;
            let rep = estimate_observability(&problem, s.pprime, s.trials, cfg.seed)?;
            let norm = input_to_state_norm(&problem)?;
            let mut table = Table::new("observability", &["j", "x", "best_q0"]);
            for (j, v) in rep.best_q0.iter().enumerate() {
                table.push(vec![j.into(), problem.disc().x(j).into(), (*v).into()]);
            }
            let checks = vec![
                Check::holds("ratio finite and positive", rep.ratio.is_finite() && rep.ratio > 0.0),
                Check::holds("input-to-state norm finite", norm.is_finite()),
            ];
            let mut report = to_value(&rep);
            report["input_to_state_norm"] = json!(norm);
            Ok(CaseOutput { report, checks, tables: vec![table] })
        }
    }
}

fn synthesize(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.control;
    let problem = control_problem(cfg, build_tree(&cfg.tree)?, s.p.0)?;
    let result = synthesize_control(&problem)?;
    let verification = verify_control(&problem, &result, s.verify_trials, cfg.seed)?;
    let (tree, disc) = (problem.tree(), problem.disc());

    let mut table = Table::new("control", &["level", "node", "j", "x", "h"]);
    for n in 0..tree.levels() {
        for k in 0..tree.node_count(n) {
            for (j, v) in result.h.level(n).node(k).iter().enumerate() {
                if disc.mask()[j] {
                    table.push(vec![n.into(), k.into(), j.into(), disc.x(j).into(), (*v).into()]);
                }
            }
        }
    }
    let mut tables = vec![table];
    if let Some(q0) = &result.q0 {
        let mut t = Table::new("adjoint_initial_state", &["j", "x", "q0"]);
        for (j, v) in q0.iter().enumerate() {
            t.push(vec![j.into(), disc.x(j).into(), (*v).into()]);
        }
        tables.push(t);
    }

    let mut checks = vec![
        Check::at_most("y(0) residual", result.y0_residual, s.y0_tol),
        Check::holds("verification passed", verification.passed),
        Check::at_most("support violation", verification.support_violation, 0.0),
    ];
    if s.p.0 == 2.0 {
        checks.push(Check::at_most("duality gap", result.duality_gap, s.gap_tol));
    }
    let mut report = json!({ "result": to_value(&result), "verification": to_value(&verification) });
    if s.oracle {
        if s.p.0 != 2.0 {
            return Err(Error::Config("control.oracle is only available for p = 2".into()));
        }
        let (h, y0) = dense_least_norm(&problem)?;
        let diff = h.max_abs_diff(&result.h);
        checks.push(Check::at_most("max |h - h_oracle|", diff, s.oracle_h_tol));
        checks.push(Check::at_most("oracle y(0) residual", y0, s.oracle_y0_tol));
        checks.push(Check::at_most("y(0) residual against oracle tolerance", result.y0_residual, s.oracle_y0_tol));
        report["oracle"] = json!({ "max_h_difference": diff, "y0_residual": y0 });
    }
    Ok(CaseOutput { report, checks, tables })
}

// ---------------------------------------------------------------- semilinear

fn nonlinearity(cfg: &ExperimentConfig) -> Result<NonlinearitySpec> {
    let s = &cfg.semilinear;
    let interval = (s.interval[0], s.interval[1]);
    match &s.nonlinearity {
        NonlinearityConfig::Polynomial(c) => NonlinearitySpec::polynomial(c, interval),
        NonlinearityConfig::Formula(f) => {
            let expr = f.expr.clone();
            let func: ScalarFn = Arc::new(move |v| expr.eval(&Env { s: v, ..Env::default() }));
            NonlinearitySpec::new(func, interval)
        }
    }
}

pub fn semilinear(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.semilinear;
    let inst = Instance::build(cfg, cfg.seed)?;
    let (tree, disc) = (&inst.tree, &inst.disc);
    if inst.data.source().sup_norm() != 0.0 {
        return Err(Error::Config("semilinear experiments take no source; remove `source`".into()));
    }
    let f = nonlinearity(cfg)?;
    let mut terminal = inst.data.terminal().clone();
    if let Some(a) = s.amplitude {
        let sup = terminal.sup_norm();
        if sup == 0.0 {
            return Err(Error::Config("semilinear.amplitude needs nonzero terminal data".into()));
        }
        terminal = terminal.scaled(a / sup);
    }
    let opts = PicardOptions { tol: s.tol, max_iter: s.max_iter, initial: s.initial };
    let run = picard_solve(tree, disc, &inst.coeffs, &f, &terminal, &opts)?;

    let mut history = Table::new("picard", &["k", "difference_sup", "difference_full", "contraction_ratio", "sup_norm", "radius"]);
    for st in &run.history {
        history.push(vec![
            st.k.into(),
            st.difference_sup.into(),
            st.difference_full.into(),
            st.contraction_ratio.into(),
            st.sup_norm.into(),
            st.radius.into(),
        ]);
    }
    let mut checks = vec![
        Check::holds("Picard iteration converged", run.converged()),
        Check::at_most("max contraction ratio", run.max_ratio.unwrap_or(0.0), s.max_ratio),
        Check::at_most("iterates leaving the ball of radius 2 ||y_1||", run.ball_violations as f64, 0.0),
    ];
    let mut report = json!({ "terminal_sup": terminal.sup_norm(), "nonlinearity": f.description(), "run": to_value(&run) });
    if let Some(sol) = &run.solution {
        let weak = verify_semilinear(tree, disc, sol, &f, &inst.coeffs);
        checks.push(Check::at_most("weak residual with the true nonlinearity", weak.telescoped_bound, s.tol));
        report["weak_residual"] = to_value(&weak);
        if s.two_start {
            let other = match s.initial {
                InitialGuess::Zero => InitialGuess::Terminal,
                InitialGuess::Terminal => InitialGuess::Zero,
            };
            let second = picard_solve(tree, disc, &inst.coeffs, &f, &terminal, &PicardOptions { initial: other, ..opts })?;
            let gap = match &second.solution {
                Some(s2) if second.converged() => s2.y.max_abs_diff(&sol.y),
                _ => f64::INFINITY,
            };
            checks.push(Check::at_most("two-start difference", gap, s.uniqueness_factor * s.tol));
            report["two_start"] = json!({ "initial": other, "iterations": second.iterations, "difference": gap });
        }
    }
    let mut tables = vec![history];
    if !s.ladder.is_empty() {
        let probe = smallness_probe(tree, disc, &inst.coeffs, &f, &terminal, &s.ladder, &opts)?;
        let mut t = Table::new("amplitude_ladder", &["amplitude", "status", "iterations", "leading_ratio", "max_ratio", "ball_violations"]);
        for e in &probe.entries {
            t.push(vec![
                e.amplitude.into(),
                to_value(&e.status).as_str().unwrap_or("").into(),
                e.iterations.into(),
                e.leading_ratio.into(),
                e.max_ratio.into(),
                e.ball_violations.into(),
            ]);
        }
        checks.push(Check::holds("contraction degrades monotonically with amplitude", probe.monotone_degradation));
        report["ladder"] = to_value(&probe);
        tables.push(t);
    }
    Ok(CaseOutput { report, checks, tables })
}

// ---------------------------------------------------------------- toolkit-props

pub fn toolkit(cfg: &ExperimentConfig) -> Result<CaseOutput> {
    let s = &cfg.toolkit;
    let mut report = serde_json::Map::new();
    let mut checks = Vec::new();
    let mut tables = Vec::new();

    if s.checks.contains(&ToolkitCheck::Truncation) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut worst: Vec<(String, f64, usize)> = Vec::new();
        let mut mismatch: f64 = 0.0;
        for i in 0..s.samples {
            let n = rng.random_range(0.1..10.0);
            let p = if i % 4 == 0 { 2.0 } else { rng.random_range(2.0..8.0) };
            let r = rng.random_range(-3.0 * n..3.0 * n);
            let fam = TruncationFamily::new(n, p)?;
            let rep = check_phi_properties(&fam, &[r])?;
            for c in &rep.checks {
                match worst.iter_mut().find(|w| w.0 == c.name) {
                    Some(w) => {
                        w.1 = w.1.min(c.worst_margin);
                        w.2 += usize::from(!c.passed);
                    }
                    None => worst.push((c.name.to_string(), c.worst_margin, usize::from(!c.passed))),
                }
            }
            mismatch = branch_mismatch(&fam).iter().fold(mismatch, |a, &b| a.max(b));
        }
        let mut t = Table::new("truncation", &["inequality", "worst_margin", "failures"]);
        for (name, margin, fails) in &worst {
            t.push(vec![name.as_str().into(), (*margin).into(), (*fails).into()]);
            checks.push(Check::at_most(format!("truncation {name} failures"), *fails as f64, 0.0));
        }
        checks.push(Check::at_most("C2 matching at |r| = n (relative)", mismatch, s.match_tol));
        report.insert("truncation".into(), json!({ "samples": s.samples, "branch_mismatch": mismatch }));
        tables.push(t);
    }

    if s.checks.contains(&ToolkitCheck::Gronwall) {
        let (a0, b0, horizon) = (0.7, 1.3, 1.0);
        let k = s.gronwall_points;
        if k < 2 {
            return Err(Error::Config("toolkit.gronwall_points must be at least 2".into()));
        }
        let times: Vec<f64> = (0..k).map(|i| horizon * i as f64 / (k - 1) as f64).collect();
        let a = vec![a0; k];
        let rep = backward_gronwall(&times, &a, &a, &vec![b0; k], &vec![1.0; k])?;
        let mut t = Table::new("gronwall", &["t", "bound", "exact", "relative_error"]);
        let mut worst: f64 = 0.0;
        for (i, &ti) in times.iter().enumerate() {
            let exact = a0 * (b0 * (horizon - ti)).exp();
            let err = (rep.bound[i] - exact).abs() / exact;
            worst = worst.max(err);
            t.push(vec![ti.into(), rep.bound[i].into(), exact.into(), err.into()]);
        }
        checks.push(Check::holds("Grönwall hypothesis holds for the constant case", rep.hypothesis_holds));
        checks.push(Check::at_most("constant-case bound vs alpha exp(beta (T - t))", worst, s.gronwall_tol));
        report.insert("gronwall".into(), json!({ "points": k, "max_relative_error": worst }));
        tables.push(t);
    }

    if s.checks.contains(&ToolkitCheck::Extrapolation) {
        let p_list: Vec<f64> = (0..7).map(|i| 2f64.powi(i)).collect();
        let est = lp_to_linf(&[1.0, 2.0], &[0.5, 0.5], &p_list)?;
        let mut t = Table::new("extrapolation", &["p", "norm", "level_set_bound"]);
        for i in 0..p_list.len() {
            t.push(vec![p_list[i].into(), est.norms[i].into(), est.level_set_bounds[i].into()]);
        }
        checks.push(Check::at_most("relative gap to the max at p = 64", est.relative_gap, s.extrapolation_tol));
        checks.push(Check::holds("L^p norms non-decreasing in p", est.monotone));
        report.insert("extrapolation".into(), to_value(&est));
        tables.push(t);
    }

    if s.checks.contains(&ToolkitCheck::Taylor) {
        let interval = (-1.0, 1.0);
        let family: Vec<(&str, NonlinearitySpec)> = vec![
            ("s^2", NonlinearitySpec::polynomial(&[0.0, 0.0, 1.0], interval)?),
            ("s^3", NonlinearitySpec::polynomial(&[0.0, 0.0, 0.0, 1.0], interval)?),
            ("s^3 - s", NonlinearitySpec::polynomial(&[0.0, -1.0, 0.0, 1.0], interval)?),
            ("sin(s)", NonlinearitySpec::with_derivatives(Arc::new(f64::sin), Arc::new(f64::cos), Arc::new(|v: f64| -v.sin()), interval)?),
            (
                "exp(s) - 1",
                NonlinearitySpec::with_derivatives(Arc::new(|v: f64| v.exp_m1()), Arc::new(f64::exp), Arc::new(f64::exp), interval)?,
            ),
            (
                "s cos(s)",
                NonlinearitySpec::with_derivatives(
                    Arc::new(|v: f64| v * v.cos()),
                    Arc::new(|v: f64| v.cos() - v * v.sin()),
                    Arc::new(|v: f64| -2.0 * v.sin() - v * v.cos()),
                    interval,
                )?,
            ),
        ];
        let samples: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let pairs: Vec<(f64, f64)> = samples.iter().zip(samples.iter().rev()).map(|(a, b)| (*a, *b)).collect();
        let mut t = Table::new("taylor", &["f", "max_defect", "m", "m1", "m3", "g_bounds_passed"]);
        let mut worst: f64 = 0.0;
        let mut bounds_ok = true;
        for (name, f) in &family {
            let d = samples.iter().fold(0.0f64, |a, &v| a.max(f.taylor_defect(v).abs()));
            let g = check_g_bounds(f, &pairs)?;
            worst = worst.max(d);
            bounds_ok &= g.passed;
            t.push(vec![(*name).into(), d.into(), f.m().into(), f.m1().into(), f.m3().into(), g.passed.into()]);
        }
        checks.push(Check::at_most("Taylor identity defect across the family", worst, s.taylor_tol));
        checks.push(Check::holds("G bounds across the family", bounds_ok));
        report.insert("taylor".into(), json!({ "functions": family.len(), "max_defect": worst }));
        tables.push(t);
    }
    Ok(CaseOutput { report: Value::Object(report), checks, tables })
}
