//! Backward Grönwall checker on a time grid t_0 < ... < t_K = T.
//!
//! Data are held constant on each cell (t_{i-1}, t_i] at their right-endpoint
//! value, so the hypothesis integral is the right-endpoint sum. The bound
//! integrates the same piecewise-constant data exactly, which reproduces
//! alpha e^{beta (T - t)} in the constant case. The product form
//! `discrete_bound` solves the discrete comparison equation exactly.

use serde::Serialize;

use crate::error::{usage, Result};

const REL_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallReport {
    pub hypothesis_holds: bool,
    /// Index of the worst hypothesis violation (or tightest point).
    pub worst_index: usize,
    pub worst_margin: f64,
    /// a + b int_t^T a c exp(int_t^u b c) du.
    pub bound: Vec<f64>,
    /// a_k + b_k sum_{i>k} dt_i a_i c_i prod_{k<l<i} (1 + dt_l b_l c_l).
    pub discrete_bound: Vec<f64>,
    pub below_bound: bool,
    pub below_discrete_bound: bool,
}

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_SLACK * lhs.abs().max(rhs.abs())
}

/// Right-endpoint values of int_{t_k}^T c g for every k.
pub fn tail_integrals(times: &[f64], c: &[f64], g: &[f64]) -> Vec<f64> {
    let k = times.len();
    let mut out = vec![0.0; k];
    for i in (1..k).rev() {
        out[i - 1] = out[i] + (times[i] - times[i - 1]) * c[i] * g[i];
    }
    out
}

pub fn backward_gronwall(times: &[f64], g: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> Result<GronwallReport> {
    let k = times.len();
    if k < 2 || [g.len(), a.len(), b.len(), c.len()].iter().any(|&l| l != k) {
        return Err(usage("Grönwall sequences must share a grid of at least two points"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(usage("time grid must be strictly increasing"));
    }
    if let Some(i) = (0..k).find(|&i| b[i] < 0.0 || c[i] < 0.0) {
        return Err(usage(format!("b and c must be nonnegative; violated at index {i}")));
    }

    let tails = tail_integrals(times, c, g);
    let mut hypothesis_holds = true;
    let mut worst_margin = f64::INFINITY;
    let mut worst_index = 0;
    for i in 0..k {
        let rhs = a[i] + b[i] * tails[i];
        let scale = g[i].abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        let margin = (rhs - g[i]) / scale;
        if margin < worst_margin {
            worst_margin = margin;
            worst_index = i;
        }
        hypothesis_holds &= within(g[i], rhs);
    }

    let mut exact = vec![0.0; k];
    let mut discrete = vec![0.0; k];
    for i in (1..k).rev() {
        let dt = times[i] - times[i - 1];
        let x = dt * b[i] * c[i];
        let phi = if x == 0.0 { 1.0 } else { x.exp_m1() / x };
        exact[i - 1] = x.exp() * exact[i] + a[i] * c[i] * dt * phi;
        discrete[i - 1] = (1.0 + x) * discrete[i] + dt * c[i] * a[i];
    }
    let bound: Vec<f64> = (0..k).map(|i| a[i] + b[i] * exact[i]).collect();
    let discrete_bound: Vec<f64> = (0..k).map(|i| a[i] + b[i] * discrete[i]).collect();
    let below_bound = (0..k).all(|i| within(g[i], bound[i]));
    let below_discrete_bound = (0..k).all(|i| within(g[i], discrete_bound[i]));
    Ok(GronwallReport {
        hypothesis_holds,
        worst_index,
        worst_margin,
        bound,
        discrete_bound,
        below_bound,
        below_discrete_bound,
    })
}
