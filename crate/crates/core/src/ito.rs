//! Discrete Itô formula for integral functionals sum_j h phi(y_j).
//!
//! For a potential phi the continuous identity reads
//!   Phi(y_t) + int phi''|grad y|^2 + 1/2 int phi'' Y^2
//!     = Phi(y_T) + int phi' (alpha y + beta Y + F) - int phi' Y dW.
//! On the tree each step n -> n+1 along child c contributes
//!   e_n = Phi(y_n) - Phi(y_{n+1}) - dt <phi'(y_n), Delta_h y_n>
//!       + dt/2 <phi''(y_n), Y_n^2> - dt <phi'(y_n), alpha y + beta Y + F>
//!       + <phi'(y_n), Y_n> dW_n,
//! and the residual at a node is E[sum_{n >= t} e_n | node].

use serde::Serialize;

use crate::error::{usage, Result};
use crate::grid::Discretization;
use crate::solver::{BspdeSolution, CoefficientSet, ProblemData};
use crate::toolkit::phi::{Potential, PowerPotential, TruncationFamily};
use crate::tree::{AdaptedRv, ScenarioTree};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoReport {
    pub p: f64,
    /// Truncation level when a truncated potential was used.
    pub truncation: Option<f64>,
    pub level: usize,
    /// Residual LHS - RHS at every node of `level`.
    pub residual: Vec<f64>,
    pub expected_residual: f64,
    pub max_abs_residual: f64,
    /// Expectations of the individual terms at `level`.
    pub state_term: f64,
    pub terminal_term: f64,
    pub gradient_term: f64,
    pub cross_term: f64,
    pub drift_term: f64,
    pub stochastic_term: f64,
}

/// Per-node spatial integrals of the integrands at levels 0..N-1.
struct StepTables {
    value: Vec<Vec<f64>>,
    gradient: Vec<Vec<f64>>,
    cross: Vec<Vec<f64>>,
    drift: Vec<Vec<f64>>,
    integrand: Vec<Vec<f64>>,
}

fn tables<P: Potential>(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
    pot: &P,
) -> StepTables {
    let m = disc.m();
    let h = disc.h();
    let dt = tree.dt();
    let mut lap = vec![0.0; m];
    let mut t = StepTables { value: vec![], gradient: vec![], cross: vec![], drift: vec![], integrand: vec![] };
    for n in 0..=tree.levels() {
        let count = tree.node_count(n);
        t.value.push((0..count).map(|k| h * sol.y.level(n).node(k).iter().map(|&v| pot.value(v)).sum::<f64>()).collect());
        if n == tree.levels() {
            break;
        }
        let (mut g, mut c, mut d, mut s) =
            (Vec::with_capacity(count), Vec::with_capacity(count), Vec::with_capacity(count), Vec::with_capacity(count));
        for k in 0..count {
            let y = sol.y.level(n).node(k);
            let z = sol.z.level(n).node(k);
            let (a, b, f) = (coeffs.alpha().level(n).node(k), coeffs.beta().level(n).node(k), data.source().level(n).node(k));
            disc.laplacian_into(y, &mut lap);
            let (mut gk, mut ck, mut dk, mut sk) = (0.0, 0.0, 0.0, 0.0);
            for j in 0..m {
                let d1 = pot.d1(y[j]);
                let d2 = pot.d2(y[j]);
                gk -= d1 * lap[j];
                ck += d2 * z[j] * z[j];
                dk += d1 * (a[j] * y[j] + b[j] * z[j] + f[j]);
                sk += d1 * z[j];
            }
            g.push(dt * h * gk);
            c.push(0.5 * dt * h * ck);
            d.push(dt * h * dk);
            s.push(h * sk);
        }
        t.gradient.push(g);
        t.cross.push(c);
        t.drift.push(d);
        t.integrand.push(s);
    }
    t
}

fn expectation_at(tree: &ScenarioTree, level: usize, v: &[f64]) -> f64 {
    tree.expectation(&AdaptedRv::new(level, v.to_vec()))
}

fn residual_with<P: Potential>(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
    pot: &P,
    level: usize,
) -> Result<ItoReport> {
    if level > tree.levels() {
        return Err(usage(format!("level {level} beyond tree depth {}", tree.levels())));
    }
    let t = tables(tree, disc, sol, coeffs, data, pot);
    let n_top = tree.levels();
    let state = t.value[level].clone();
    let terminal = tree.condexp(&AdaptedRv::new(n_top, t.value[n_top].clone()), level)?.values;
    let gradient = tree.additive_condexp(level, |n, k, _| t.gradient[n][k]).values;
    let cross = tree.additive_condexp(level, |n, k, _| t.cross[n][k]).values;
    let drift = tree.additive_condexp(level, |n, k, _| t.drift[n][k]).values;
    let stochastic = tree
        .additive_condexp(level, |n, k, c| t.integrand[n][k] * (tree.brownian(n + 1, c) - tree.brownian(n, k)))
        .values;
    let residual: Vec<f64> = (0..tree.node_count(level))
        .map(|k| state[k] + gradient[k] + cross[k] - terminal[k] - drift[k] + stochastic[k])
        .collect();
    let max_abs_residual = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    Ok(ItoReport {
        p: pot.exponent(),
        truncation: None,
        level,
        expected_residual: expectation_at(tree, level, &residual),
        max_abs_residual,
        state_term: expectation_at(tree, level, &state),
        terminal_term: expectation_at(tree, level, &terminal),
        gradient_term: expectation_at(tree, level, &gradient),
        cross_term: expectation_at(tree, level, &cross),
        drift_term: expectation_at(tree, level, &drift),
        stochastic_term: expectation_at(tree, level, &stochastic),
        residual,
    })
}

/// Residual of the discrete Itô formula for ||y||_{L^p}^p at every node of `level`.
pub fn ito_residual(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
    p: f64,
    level: usize,
) -> Result<ItoReport> {
    residual_with(tree, disc, sol, coeffs, data, &PowerPotential::new(p)?, level)
}

/// Same identity with |r|^p replaced by the truncated potential phi_n.
pub fn phi_identity_check(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
    fam: &TruncationFamily,
    level: usize,
) -> Result<ItoReport> {
    let mut report = residual_with(tree, disc, sol, coeffs, data, fam, level)?;
    report.truncation = Some(fam.n());
    Ok(report)
}

/// E[sum_n <phi'(y_n), Y_n> dW_n] and the martingale defect of its partial sums.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StochasticIntegralCheck {
    pub p: f64,
    pub expectation: f64,
    /// max |E[S_{n+1} | F_n] - S_n|; only available on full trees.
    pub martingale_defect: Option<f64>,
    pub max_abs_value: f64,
}

pub fn stochastic_integral_check(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    p: f64,
) -> Result<StochasticIntegralCheck> {
    let pot = PowerPotential::new(p)?;
    let h = disc.h();
    let integrand: Vec<AdaptedRv> = (0..tree.levels())
        .map(|n| {
            let values = (0..tree.node_count(n))
                .map(|k| {
                    let (y, z) = (sol.y.level(n).node(k), sol.z.level(n).node(k));
                    h * y.iter().zip(z).map(|(&a, &b)| pot.d1(a) * b).sum::<f64>()
                })
                .collect();
            AdaptedRv::new(n, values)
        })
        .collect();
    if tree.is_recombining() {
        let e = tree.additive_condexp(0, |n, k, c| {
            integrand[n].values[k] * (tree.brownian(n + 1, c) - tree.brownian(n, k))
        });
        return Ok(StochasticIntegralCheck { p, expectation: e.values[0], martingale_defect: None, max_abs_value: f64::NAN });
    }
    let sums = tree.ito_partial_sums(&integrand)?;
    let last = sums.last().expect("terminal level");
    Ok(StochasticIntegralCheck {
        p,
        expectation: tree.expectation(last),
        martingale_defect: Some(tree.check_martingale(&sums)?),
        max_abs_value: last.values.iter().fold(0.0f64, |a, v| a.max(v.abs())),
    })
}

/// At p = 2 the per-step defect is -dt^2 ||A_n||^2 + 2 dt <A_n, Y_n> dW_n with
/// A_n = Delta_h y_n + alpha y_n + beta Y_n + F_n; returns its conditional
/// expectation at every node of `level`.
pub fn energy_consistency_defect(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
    level: usize,
) -> Result<Vec<f64>> {
    if level > tree.levels() {
        return Err(usage(format!("level {level} beyond tree depth {}", tree.levels())));
    }
    let m = disc.m();
    let dt = tree.dt();
    let mut lap = vec![0.0; m];
    let mut a_sq = Vec::new();
    let mut a_y = Vec::new();
    for n in 0..tree.levels() {
        let (mut sq, mut ay) = (Vec::new(), Vec::new());
        for k in 0..tree.node_count(n) {
            let y = sol.y.level(n).node(k);
            let z = sol.z.level(n).node(k);
            let (a, b, f) = (coeffs.alpha().level(n).node(k), coeffs.beta().level(n).node(k), data.source().level(n).node(k));
            disc.laplacian_into(y, &mut lap);
            let drift: Vec<f64> = (0..m).map(|j| lap[j] + a[j] * y[j] + b[j] * z[j] + f[j]).collect();
            sq.push(disc.inner(&drift, &drift));
            ay.push(disc.inner(&drift, z));
        }
        a_sq.push(sq);
        a_y.push(ay);
    }
    Ok(tree
        .additive_condexp(level, |n, k, c| {
            -dt * dt * a_sq[n][k] + 2.0 * dt * a_y[n][k] * (tree.brownian(n + 1, c) - tree.brownian(n, k))
        })
        .values)
}
