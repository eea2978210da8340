//! Independent checks of synthesized controls.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    control_norm, control_pairing, restrict_to_mask, solve_forward, synthesize_control, terminal_pairing,
    ControlProblem, ControlResult, InitialMeasurability,
};
use crate::error::{usage, Result};
use crate::field::{AdaptedField, LevelSlice};
use crate::solver::{solve_linear, ProblemData};
use crate::toolkit::fit::fit_line;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    /// ||y(0)||_{L^2} of the controlled equation, re-solved from scratch.
    pub y0_residual: f64,
    /// max over random adjoints of |E<y_T, q_N> - <y(0), q_0> + dt sum E<chi h, q>|.
    pub identity_defect: f64,
    /// Largest magnitude among the terms of the identity, for scale.
    pub identity_scale: f64,
    pub trials: usize,
    /// max |h| off the control mask.
    pub support_violation: f64,
    /// max over levels of the spread of h across nodes.
    pub node_spread: f64,
    pub passed: bool,
}

pub fn verify_control(problem: &ControlProblem, result: &ControlResult, trials: usize, seed: u64) -> Result<VerificationReport> {
    let (tree, disc) = (problem.tree(), problem.disc());
    let m = disc.m();
    let h = &result.h;
    h.check(tree, m, tree.levels(), "control")?;
    let data = ProblemData::new(tree, disc, problem.terminal().clone(), restrict_to_mask(disc, h))?;
    let sol = solve_linear(tree, disc, problem.coeffs(), &data)?;
    let y0 = sol.y.level(0).node(0).to_vec();
    let y0_residual = disc.inner(&y0, &y0).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut identity_defect, mut identity_scale): (f64, f64) = (0.0, 0.0);
    for _ in 0..trials {
        let q0 = match problem.measurability {
            InitialMeasurability::Deterministic => (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            InitialMeasurability::Terminal => {
                let slice = LevelSlice::from_fn(tree, tree.levels(), m, |_, _| rng.random_range(-1.0..=1.0));
                problem.reduce_initial_state(&slice)?
            }
        };
        let q = solve_forward(tree, disc, problem.alpha(), &q0)?;
        let a = terminal_pairing(tree, disc, problem.terminal(), &q);
        let b = disc.inner(&y0, &q0);
        let c = control_pairing(tree, disc, h, &q);
        identity_defect = identity_defect.max((a - b + c).abs());
        identity_scale = identity_scale.max(a.abs()).max(b.abs()).max(c.abs());
    }

    let mask = disc.mask();
    let mut support_violation: f64 = 0.0;
    let mut node_spread: f64 = 0.0;
    for s in h.slices() {
        for k in 0..s.node_count() {
            for j in 0..m {
                if !mask[j] {
                    support_violation = support_violation.max(s.node(k)[j].abs());
                }
                node_spread = node_spread.max((s.node(k)[j] - s.node(0)[j]).abs());
            }
        }
    }
    let passed = y0_residual <= problem.y0_tol
        && identity_defect <= 1e-10 * identity_scale.max(1.0)
        && support_violation == 0.0;
    Ok(VerificationReport { y0_residual, identity_defect, identity_scale, trials, support_violation, node_spread, passed })
}

/// Gram matrix of h -> y(0) against its adjoint, column i from q_0 = e_i.
fn input_gram(problem: &ControlProblem) -> Result<DMatrix<f64>> {
    let (tree, disc) = (problem.tree(), problem.disc());
    let m = disc.m();
    let zero_terminal = problem.zero_terminal();
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        let q = solve_forward(tree, disc, problem.alpha(), &e)?;
        let col = problem.initial_state(&zero_terminal, &restrict_to_mask(disc, &q))?;
        for (r, v) in col.iter().enumerate() {
            g[(r, i)] = *v;
        }
    }
    Ok((&g + g.transpose()) * 0.5)
}

/// Operator norm of h -> y(0) from L^2(Omega x (0,T) x O_0) to L^2(O).
pub fn input_to_state_norm(problem: &ControlProblem) -> Result<f64> {
    let eig = SymmetricEigen::new(input_gram(problem)?);
    Ok(eig.eigenvalues.max().max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub noise_levels: Vec<f64>,
    /// L^2 norms of the perturbations.
    pub perturbation_norms: Vec<f64>,
    pub y0_residuals: Vec<f64>,
    /// Fitted d||y(0)|| / d||perturbation|| along a random direction.
    pub slope: f64,
    /// Same quantity along the worst-case direction.
    pub worst_case_slope: f64,
    pub operator_norm: f64,
}

/// Perturbs h by noise on the mask and tracks ||y(0)||.
pub fn sensitivity_study(problem: &ControlProblem, result: &ControlResult, noise_levels: &[f64], seed: u64) -> Result<SensitivityReport> {
    if noise_levels.len() < 2 {
        return Err(usage("sensitivity study needs at least two noise levels"));
    }
    let (tree, disc) = (problem.tree(), problem.disc());
    let m = disc.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = restrict_to_mask(
        disc,
        &AdaptedField::from_fn(tree, m, tree.levels(), |_, _, _| rng.random_range(-1.0..=1.0)),
    );
    let unit = control_norm(tree, disc, &direction, 2.0);
    let mut perturbation_norms = Vec::new();
    let mut y0_residuals = Vec::new();
    for &eps in noise_levels {
        let mut h = result.h.clone();
        for n in 0..h.len() {
            let d = direction.level(n).values();
            for (v, dv) in h.level_mut(n).values_mut().iter_mut().zip(d) {
                *v += eps * dv;
            }
        }
        let y0 = problem.initial_state(problem.terminal(), &h)?;
        perturbation_norms.push(eps * unit);
        y0_residuals.push(disc.inner(&y0, &y0).sqrt());
    }
    let slope = fit_line(&perturbation_norms, &y0_residuals)?.slope;

    let g = input_gram(problem)?;
    let eig = SymmetricEigen::new(g);
    let top = eig.eigenvalues.imax();
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let worst = restrict_to_mask(disc, &solve_forward(tree, disc, problem.alpha(), &v)?);
    let worst_norm = control_norm(tree, disc, &worst, 2.0);
    let y0 = problem.initial_state(&problem.zero_terminal(), &worst)?;
    let worst_case_slope = disc.inner(&y0, &y0).sqrt() / worst_norm;
    Ok(SensitivityReport {
        noise_levels: noise_levels.to_vec(),
        perturbation_norms,
        y0_residuals,
        slope,
        worst_case_slope,
        operator_norm: eig.eigenvalues[top].max(0.0).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupReport {
    pub horizons: Vec<f64>,
    pub costs: Vec<f64>,
    pub y0_residuals: Vec<f64>,
    pub converged: Vec<bool>,
    /// False when some synthesis did not converge; the fit is then omitted.
    pub complete: bool,
    /// All costs vanish.
    pub degenerate: bool,
    pub strictly_decreasing: bool,
    /// Slope and intercept of log(cost) against 1/T.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Synthesizes a control per horizon with `build(T)` and fits log cost against 1/T.
pub fn cost_blowup_study<B>(horizons: &[f64], build: B) -> Result<BlowupReport>
where
    B: Fn(f64) -> Result<ControlProblem>,
{
    if horizons.len() < 3 {
        return Err(usage(format!("cost study needs at least 3 horizons, got {}", horizons.len())));
    }
    if horizons.iter().any(|&t| !(t > 0.0 && t <= 1.0)) || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage("horizons must be increasing and lie in (0, 1]"));
    }
    let mut costs = Vec::new();
    let mut y0_residuals = Vec::new();
    let mut converged = Vec::new();
    for &t in horizons {
        let problem = build(t)?;
        let r = synthesize_control(&problem)?;
        costs.push(r.cost_p);
        y0_residuals.push(r.y0_residual);
        converged.push(r.converged);
    }
    let complete = converged.iter().all(|&c| c);
    let degenerate = costs.iter().all(|&c| c == 0.0);
    let strictly_decreasing = costs.windows(2).all(|w| w[1] < w[0]);
    let (mut slope, mut intercept) = (None, None);
    if complete && !degenerate && costs.iter().all(|&c| c > 0.0) {
        let xs: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
        let ys: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
        let fit = fit_line(&xs, &ys)?;
        slope = Some(fit.slope);
        intercept = Some(fit.intercept);
    }
    Ok(BlowupReport {
        horizons: horizons.to_vec(),
        costs,
        y0_residuals,
        converged,
        complete,
        degenerate,
        strictly_decreasing,
        slope,
        intercept,
    })
}
