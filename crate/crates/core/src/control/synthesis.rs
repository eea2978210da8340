//! Minimum-norm null controls by duality.
//!
//! For p = 2 the control is h = chi q with q the adjoint started from the
//! minimizer of J(q_0) = 1/2 ||chi q||^2 + E<y_T, q_N>, whose gradient is y(0)
//! driven by that h; it is the minimum-norm solution of y(0) = 0. Other finite p minimize ||h||_p^p on the constraint set
//! directly; the optimum satisfies h = c |q|^{p'-2} q for some adjoint q,
//! which is recovered and reported. p = inf is an epigraph linear program.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{control_norm, control_pairing, solve_forward, terminal_pairing, ControlProblem, ControlResult};
use crate::error::{Error, Result};
use crate::field::AdaptedField;

fn l2(problem: &ControlProblem, v: &[f64]) -> f64 {
    problem.disc().inner(v, v).sqrt()
}

fn finish(
    problem: &ControlProblem,
    method: &str,
    h: AdaptedField,
    q0: Option<Vec<f64>>,
    representation_defect: Option<f64>,
    iterations: usize,
) -> Result<ControlResult> {
    let (tree, disc) = (problem.tree(), problem.disc());
    let y0 = problem.initial_state(problem.terminal(), &h)?;
    let y0_residual = l2(problem, &y0);
    let mut duality_gap: f64 = 0.0;
    for k in 1..=disc.m() {
        let mode = disc.sine_mode(k);
        let norm = disc.inner(&mode, &mode).sqrt();
        let q0: Vec<f64> = mode.iter().map(|v| v / norm).collect();
        let q = solve_forward(tree, disc, problem.alpha(), &q0)?;
        let gap = terminal_pairing(tree, disc, problem.terminal(), &q) + control_pairing(tree, disc, &h, &q);
        duality_gap = duality_gap.max(gap.abs());
    }
    Ok(ControlResult {
        p: problem.p(),
        method: method.to_string(),
        cost_p: control_norm(tree, disc, &h, problem.p()),
        cost_inf: control_norm(tree, disc, &h, f64::INFINITY),
        y0_residual,
        duality_gap,
        iterations,
        converged: y0_residual <= problem.y0_tol,
        representation_defect,
        q0,
        h,
    })
}

pub fn synthesize_control(problem: &ControlProblem) -> Result<ControlResult> {
    if problem.terminal().sup_norm() == 0.0 {
        let m = problem.disc().m();
        return finish(problem, "zero", problem.zero_control(), Some(vec![0.0; m]), None, 0);
    }
    let p = problem.p();
    if p == 2.0 {
        least_norm(problem)
    } else if p.is_infinite() {
        epigraph_lp(problem)
    } else {
        newton(problem)
    }
}

/// Unknowns of the discretized control and the linear map h -> y(0) - y_free(0).
struct ConstraintMap {
    /// (level, node, grid index) of every masked control entry.
    vars: Vec<(usize, usize, usize)>,
    /// Control-norm weights dt P(n, k) h.
    weights: Vec<f64>,
    /// Adjoints q^{(i)} started from the unit vectors.
    basis: Vec<AdaptedField>,
    /// Row i, column u: dt P(n, k) q^{(i)}_{n+1}(k, j).
    rows: DMatrix<f64>,
    /// -y(0) of the uncontrolled equation.
    target: DVector<f64>,
}

impl ConstraintMap {
    fn new(problem: &ControlProblem) -> Result<Self> {
        let (tree, disc) = (problem.tree(), problem.disc());
        let m = disc.m();
        let mut vars = Vec::new();
        let mut weights = Vec::new();
        for n in 0..tree.levels() {
            for k in 0..tree.node_count(n) {
                for j in (0..m).filter(|&j| disc.mask()[j]) {
                    vars.push((n, k, j));
                    weights.push(tree.dt() * tree.probability(n, k) * disc.h());
                }
            }
        }
        let basis: Vec<AdaptedField> = (0..m)
            .map(|i| {
                let mut e = vec![0.0; m];
                e[i] = 1.0;
                solve_forward(tree, disc, problem.alpha(), &e)
            })
            .collect::<Result<_>>()?;
        let rows = DMatrix::from_fn(m, vars.len(), |i, u| {
            let (n, k, j) = vars[u];
            tree.dt() * tree.probability(n, k) * basis[i].level(n).node(k)[j]
        });
        let free = problem.initial_state(problem.terminal(), &problem.zero_control())?;
        let target = -DVector::from_vec(free);
        Ok(Self { vars, weights, basis, rows, target })
    }

    /// Orthonormal rows spanning the constraints and the matching right-hand side.
    fn orthonormal(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let qr = self.rows.transpose().qr();
        let (q, r) = (qr.q(), qr.r());
        let rt = r.transpose();
        let c = rt
            .solve_lower_triangular(&self.target)
            .ok_or_else(|| Error::Config("the control region cannot reach every state; y(0) = 0 is not attainable".into()))?;
        Ok((q.transpose(), c))
    }

    fn to_field(&self, problem: &ControlProblem, values: &[f64]) -> AdaptedField {
        let mut h = problem.zero_control();
        for (&(n, k, j), v) in self.vars.iter().zip(values) {
            h.level_mut(n).node_mut(k)[j] = *v;
        }
        h
    }

    fn from_field(&self, h: &AdaptedField) -> Vec<f64> {
        self.vars.iter().map(|&(n, k, j)| h.level(n).node(k)[j]).collect()
    }
}

/// Minimum-norm control: h = W^{-1} L^T mu with L W^{-1} L^T mu = -y_free(0),
/// computed from a Householder QR of W^{-1/2} L^T and refined with residuals
/// from fresh solves. The equivalent adjoint start is q_0 = mu / h.
///
/// The normal equations of this problem are too ill-conditioned for Krylov
/// iterations on fine grids: the reachable directions of high spatial
/// frequency are damped below rounding level.
fn least_norm(problem: &ControlProblem) -> Result<ControlResult> {
    let disc = problem.disc();
    let map = ConstraintMap::new(problem)?;
    let inv_sqrt_w = DVector::from_iterator(map.weights.len(), map.weights.iter().map(|w| 1.0 / w.sqrt()));
    let scaled = DMatrix::from_fn(map.vars.len(), map.basis.len(), |u, i| map.rows[(i, u)] * inv_sqrt_w[u]);
    let qr = scaled.qr();
    let (q, r) = (qr.q(), qr.r());
    let solve = |rhs: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let c = r.transpose().solve_lower_triangular(rhs).ok_or_else(|| {
            Error::Config("the control region cannot reach every state; y(0) = 0 is not attainable".into())
        })?;
        let mu = r.solve_upper_triangular(&c).expect("triangular factor already checked");
        Ok(((&q * c).component_mul(&inv_sqrt_w), mu))
    };
    let (mut h, mut mu) = solve(&map.target)?;
    let mut field = map.to_field(problem, h.as_slice());
    let mut best = l2(problem, &problem.initial_state(problem.terminal(), &field)?);
    let mut iterations = 1;
    while iterations < problem.max_iter.min(8) && best > 0.0 {
        let y0 = problem.initial_state(problem.terminal(), &field)?;
        let (dh, dmu) = solve(&-DVector::from_vec(y0))?;
        let (h_new, mu_new) = (&h + dh, &mu + dmu);
        let field_new = map.to_field(problem, h_new.as_slice());
        let res = l2(problem, &problem.initial_state(problem.terminal(), &field_new)?);
        iterations += 1;
        if res >= best {
            break;
        }
        (h, mu, field, best) = (h_new, mu_new, field_new, res);
    }
    let q0: Vec<f64> = mu.iter().map(|v| v / disc.h()).collect();
    finish(problem, "least-norm-qr", field, Some(q0), Some(0.0), iterations)
}

/// min sum_u w_u |h_u|^p subject to y(0) = 0, by Newton steps that stay on the
/// constraint set. The Hessian is diagonal, so each step costs one M x M solve.
/// Starts from the p = 2 control. The adjoint representation
/// |h|^{p-2} h = c chi q is recovered afterwards by least squares.
fn newton(problem: &ControlProblem) -> Result<ControlResult> {
    let p = problem.p();
    let map = ConstraintMap::new(problem)?;
    let (rows, rhs) = map.orthonormal()?;
    let warm = least_norm(&problem.with_p(2.0)?)?;
    let mut h = DVector::from_vec(map.from_field(&warm.h));
    let project = |h: &mut DVector<f64>| {
        let defect = &rhs - &rows * &*h;
        *h += rows.transpose() * defect;
    };
    project(&mut h);
    let w = DVector::from_vec(map.weights.clone());
    let value = |h: &DVector<f64>, s: f64| -> f64 { h.iter().zip(w.iter()).map(|(v, wu)| wu * (v / s).abs().powf(p)).sum() };

    // Entries far below the max carry almost no curvature for large p; a
    // floor keeps the Schur complement finite. A coarse floor first, then a
    // fine one once progress stalls.
    let mut iterations = 0;
    for floor in [1e-10, 1e-16] {
        let mut history: Vec<f64> = Vec::new();
        while iterations < problem.max_iter {
            iterations += 1;
            let s = h.amax();
            if s == 0.0 {
                break;
            }
            let r = &h / s;
            let grad = DVector::from_fn(r.len(), |u, _| w[u] * p * r[u].abs().powf(p - 2.0) * r[u]);
            let hess = DVector::from_fn(r.len(), |u, _| w[u] * p * (p - 1.0) * r[u].abs().powf(p - 2.0).max(floor));
            let hinv_g = grad.component_div(&hess);
            let mut schur = DMatrix::zeros(rows.nrows(), rows.nrows());
            for u in 0..r.len() {
                let col = rows.column(u);
                schur += (col * col.transpose()) / hess[u];
            }
            let Some(ch) = schur.cholesky() else { break };
            let lam = ch.solve(&(-(&rows * &hinv_g)));
            let dir_scaled = -(&hinv_g + (rows.transpose() * &lam).component_div(&hess));
            let decrement = -grad.dot(&dir_scaled);
            let phi0 = value(&h, s);
            if !(decrement > 1e-14 * phi0) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &h + &dir_scaled * (t * s);
                if value(&trial, s) <= phi0 - 1e-4 * t * decrement {
                    h = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            project(&mut h);
            if dir_scaled.amax() * t <= problem.step_tol {
                break;
            }
            let cost = h.iter().zip(w.iter()).map(|(v, wu)| wu * v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
            history.push(cost);
            if history.len() > 50 && history[history.len() - 51] - cost <= 1e-12 * cost {
                break;
            }
        }
    }
    let field = map.to_field(problem, h.as_slice());
    let (q0, defect) = representation(problem, &map, &h);
    finish(problem, "newton", field, Some(q0), Some(defect), iterations + warm.iterations)
}

/// q_0 whose adjoint best matches |h|^{p-2} h / max|h|^{p-1} on the mask in
/// the weighted least-squares sense, and the relative mismatch.
fn representation(problem: &ControlProblem, map: &ConstraintMap, h: &DVector<f64>) -> (Vec<f64>, f64) {
    let p = problem.p();
    let s = h.amax();
    let m = map.basis.len();
    if s == 0.0 {
        return (vec![0.0; m], 0.0);
    }
    let target = DVector::from_fn(h.len(), |u, _| {
        let r = h[u] / s;
        r.abs().powf(p - 2.0) * r * map.weights[u].sqrt()
    });
    let design = DMatrix::from_fn(h.len(), m, |u, i| {
        let (n, k, j) = map.vars[u];
        map.basis[i].level(n).node(k)[j] * map.weights[u].sqrt()
    });
    match design.clone().svd(true, true).solve(&target, 1e-14) {
        Ok(x) => {
            let defect = (&design * &x - &target).norm() / target.norm();
            (x.as_slice().to_vec(), defect)
        }
        Err(_) => (vec![0.0; m], f64::INFINITY),
    }
}

/// min t subject to |h| <= t on the mask and y(0) = 0. The constraint rows
/// dt P(n,k) q^{(i)}_{n+1}(k, j) are orthonormalized first so the simplex
/// tolerances see a well-scaled system.
fn epigraph_lp(problem: &ControlProblem) -> Result<ControlResult> {
    let map = ConstraintMap::new(problem)?;
    let (rows, rhs) = map.orthonormal()?;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let mut vars = Vec::with_capacity(map.vars.len());
    for _ in &map.vars {
        let v = lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY));
        lp.add_constraint(&[(v, 1.0), (t, -1.0)], ComparisonOp::Le, 0.0);
        lp.add_constraint(&[(v, 1.0), (t, 1.0)], ComparisonOp::Ge, 0.0);
        vars.push(v);
    }
    for i in 0..rows.nrows() {
        let row: Vec<_> = vars.iter().enumerate().map(|(u, &v)| (v, rows[(i, u)])).collect();
        lp.add_constraint(row, ComparisonOp::Eq, rhs[i]);
    }
    let solution = lp
        .solve()
        .map_err(|e| Error::Solver(format!("epigraph linear program: {e}")))?
        .into_solution()
        .map_err(|_| Error::Solver("epigraph linear program stopped without a solution".into()))?;
    let values: Vec<f64> = vars.iter().map(|&v| solution.var_value(v)).collect();
    finish(problem, "epigraph-lp", map.to_field(problem, &values), None, None, 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderEntry {
    pub p: f64,
    pub cost_p: f64,
    pub cost_inf: f64,
    pub y0_residual: f64,
    pub converged: bool,
}

/// Controls for a ladder of finite exponents against the p = inf optimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderReport {
    pub entries: Vec<LadderEntry>,
    pub lp: LadderEntry,
    /// ||h_inf||_inf <= ||h_q||_inf for every finite q.
    pub lp_is_minimal: bool,
    /// ||h_q||_inf is non-increasing in q.
    pub sup_costs_non_increasing: bool,
    /// ||h_q||_{L^q} is non-decreasing in q (total measure T |O_0| <= 1).
    pub lq_costs_non_decreasing: bool,
    pub passed: bool,
}

/// Relative slack for comparing costs produced by different solvers.
const COST_SLACK: f64 = 1e-9;

pub fn exponent_ladder(problem: &ControlProblem, exponents: &[f64]) -> Result<LadderReport> {
    let entry = |r: &ControlResult| LadderEntry {
        p: r.p,
        cost_p: r.cost_p,
        cost_inf: r.cost_inf,
        y0_residual: r.y0_residual,
        converged: r.converged,
    };
    let mut entries = Vec::new();
    for &q in exponents {
        entries.push(entry(&synthesize_control(&problem.with_p(q)?)?));
    }
    let lp = entry(&synthesize_control(&problem.with_p(f64::INFINITY)?)?);
    let lp_is_minimal = entries.iter().all(|e| lp.cost_inf <= e.cost_inf * (1.0 + COST_SLACK));
    let sup_costs_non_increasing = entries.windows(2).all(|w| w[1].cost_inf <= w[0].cost_inf * (1.0 + COST_SLACK));
    let lq_costs_non_decreasing = entries.windows(2).all(|w| w[1].cost_p >= w[0].cost_p * (1.0 - COST_SLACK));
    let passed = lp.converged && entries.iter().all(|e| e.converged) && lp_is_minimal && sup_costs_non_increasing;
    Ok(LadderReport { entries, lp, lp_is_minimal, sup_costs_non_increasing, lq_costs_non_decreasing, passed })
}
