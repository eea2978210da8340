//! Lower estimates of the observability constant
//! ||q_N||_{L^{p'}(Omega x O)} <= C ||q||_{L^{p'}(Omega x (0,T) x O_0)}.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{control_norm, solve_forward, ControlProblem};
use crate::error::{usage, Error, Result};
use crate::field::AdaptedField;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub pprime: f64,
    pub trials: usize,
    pub best_random_ratio: f64,
    /// Generalized-eigenvalue refinement, p' = 2 only.
    pub refined_ratio: Option<f64>,
    pub power_iterations: usize,
    /// Best ratio found; a lower bound on the discrete constant.
    pub ratio: f64,
    pub best_q0: Vec<f64>,
}

fn terminal_norm(problem: &ControlProblem, q: &AdaptedField, pprime: f64) -> f64 {
    let (tree, disc) = (problem.tree(), problem.disc());
    let last = tree.levels() - 1;
    let mut acc = 0.0;
    for k in 0..tree.node_count(last) {
        acc += tree.probability(last, k) * disc.lp_norm_pow(q.level(last).node(k), pprime);
    }
    acc.powf(1.0 / pprime)
}

/// ||q_N|| / ||chi q|| for the adjoint started at q0.
pub fn observability_ratio(problem: &ControlProblem, q0: &[f64], pprime: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&pprime) {
        return Err(usage(format!("observability exponent must lie in [1, 2], got {pprime}")));
    }
    if q0.iter().all(|v| *v == 0.0) {
        return Err(usage("observability ratio is undefined for a zero initial state"));
    }
    let (tree, disc) = (problem.tree(), problem.disc());
    let q = solve_forward(tree, disc, problem.alpha(), q0)?;
    let observed = control_norm(tree, disc, &q, pprime);
    Ok(terminal_norm(problem, &q, pprime) / observed)
}

fn gram_matrices(problem: &ControlProblem) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (tree, disc) = (problem.tree(), problem.disc());
    let m = disc.m();
    let basis: Vec<AdaptedField> = (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            solve_forward(tree, disc, problem.alpha(), &e)
        })
        .collect::<Result<_>>()?;
    let masked = |v: &[f64], w: &[f64]| -> f64 {
        disc.h() * (0..m).filter(|&j| disc.mask()[j]).map(|j| v[j] * w[j]).sum::<f64>()
    };
    let last = tree.levels() - 1;
    let mut g_obs = DMatrix::zeros(m, m);
    let mut g_term = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut obs = 0.0;
            for n in 0..tree.levels() {
                for k in 0..tree.node_count(n) {
                    obs += tree.probability(n, k) * masked(basis[a].level(n).node(k), basis[b].level(n).node(k));
                }
            }
            let mut term = 0.0;
            for k in 0..tree.node_count(last) {
                term += tree.probability(last, k) * disc.inner(basis[a].level(last).node(k), basis[b].level(last).node(k));
            }
            g_obs[(a, b)] = tree.dt() * obs;
            g_obs[(b, a)] = tree.dt() * obs;
            g_term[(a, b)] = term;
            g_term[(b, a)] = term;
        }
    }
    Ok((g_obs, g_term))
}

pub fn estimate_observability(problem: &ControlProblem, pprime: f64, trials: usize, seed: u64) -> Result<ObservabilityReport> {
    if trials == 0 {
        return Err(usage("observability estimate needs at least one trial"));
    }
    let m = problem.disc().m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (f64::NEG_INFINITY, vec![0.0; m]);
    for _ in 0..trials {
        let q0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
        if q0.iter().all(|v| *v == 0.0) {
            continue;
        }
        let r = observability_ratio(problem, &q0, pprime)?;
        if r > best.0 {
            best = (r, q0);
        }
    }
    let best_random_ratio = best.0;
    let (mut refined_ratio, mut power_iterations) = (None, 0);
    let mut ratio = best_random_ratio;
    let mut best_q0 = best.1.clone();
    if pprime == 2.0 {
        let (g_obs, g_term) = gram_matrices(problem)?;
        let chol = g_obs.cholesky().ok_or_else(|| {
            Error::Config("the adjoint is invisible on the control region; widen the control interval".into())
        })?;
        let l = chol.l();
        let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Solver("singular observation Gram factor".into()))?;
        let c = &l_inv * &g_term * l_inv.transpose();
        let mut v = l.transpose() * DVector::from_vec(best.1.clone());
        let mut mu = v.dot(&(&c * &v)) / v.dot(&v);
        for _ in 0..1000 {
            power_iterations += 1;
            let w = &c * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            v = w / norm;
            let next = v.dot(&(&c * &v));
            let done = (next - mu).abs() <= 1e-15 * next.abs();
            mu = next;
            if done {
                break;
            }
        }
        let q0 = l_inv.transpose() * &v;
        let r = observability_ratio(problem, q0.as_slice(), 2.0)?;
        refined_ratio = Some(r);
        if r > ratio {
            ratio = r;
            best_q0 = q0.as_slice().to_vec();
        }
    }
    Ok(ObservabilityReport { pprime, trials, best_random_ratio, refined_ratio, power_iterations, ratio, best_q0 })
}
