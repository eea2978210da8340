//! L^p norms of a weighted finite sample and their climb to the max.

use serde::Serialize;

use crate::error::{usage, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinfEstimate {
    pub p_list: Vec<f64>,
    pub norms: Vec<f64>,
    pub max: f64,
    pub total_measure: f64,
    /// mu(A_M)^(1/p) M with M the max: the lower bound from the level-set argument.
    pub level_set_bounds: Vec<f64>,
    /// Non-decreasing in p (guaranteed when the total measure is at most 1).
    pub monotone: bool,
    /// (max - norm at the largest p) / max.
    pub relative_gap: f64,
}

impl LinfEstimate {
    pub fn within(&self, rel_tol: f64) -> bool {
        self.relative_gap <= rel_tol
    }
}

pub fn lp_to_linf(values: &[f64], weights: &[f64], p_list: &[f64]) -> Result<LinfEstimate> {
    if values.is_empty() {
        return Err(usage("L^p extrapolation needs a nonempty sample"));
    }
    if weights.len() != values.len() {
        return Err(usage("values and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(usage("weights must be positive and finite"));
    }
    if p_list.is_empty() || p_list.windows(2).any(|w| !(w[1] > w[0])) || p_list[0] < 1.0 {
        return Err(usage("p list must be increasing and start at p >= 1"));
    }
    if *p_list.last().unwrap() < 64.0 {
        return Err(usage("p list must reach at least 64"));
    }
    let total_measure: f64 = weights.iter().sum();
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top_measure: f64 = values.iter().zip(weights).filter(|(v, _)| v.abs() == max).map(|(_, w)| w).sum();

    let mut norms = Vec::with_capacity(p_list.len());
    let mut level_set_bounds = Vec::with_capacity(p_list.len());
    for &p in p_list {
        if max == 0.0 {
            norms.push(0.0);
            level_set_bounds.push(0.0);
            continue;
        }
        let mut acc = 0.0;
        for (v, w) in values.iter().zip(weights) {
            acc += w * (v.abs() / max).powf(p);
        }
        norms.push(max * acc.powf(1.0 / p));
        level_set_bounds.push(max * top_measure.powf(1.0 / p));
    }
    let monotone = norms.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-14));
    let relative_gap = if max == 0.0 { 0.0 } else { (max - norms.last().unwrap()) / max };
    Ok(LinfEstimate { p_list: p_list.to_vec(), norms, max, total_measure, level_set_bounds, monotone, relative_gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field() {
        let est = lp_to_linf(&[3.0; 4], &[0.25; 4], &[1.0, 2.0, 64.0]).unwrap();
        for v in &est.norms {
            assert!((v - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_atoms() {
        let est = lp_to_linf(&[1.0, 2.0], &[0.5, 0.5], &[2.0, 8.0, 64.0]).unwrap();
        let at64 = *est.norms.last().unwrap();
        assert!((at64 - 1.978_456_9).abs() < 1e-6, "{at64}");
        assert!(est.within(0.011));
        assert!(est.monotone);
    }

    #[test]
    fn rare_spike() {
        let p: Vec<f64> = (0..13).map(|k| 2f64.powi(k)).collect();
        let est = lp_to_linf(&[10.0, 1.0], &[1e-6, 1.0 - 1e-6], &p).unwrap();
        assert!(est.monotone);
        assert!(est.norms[12] > 9.9);
        for (n, lb) in est.norms.iter().zip(&est.level_set_bounds) {
            assert!(n >= lb);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(lp_to_linf(&[], &[], &[64.0]).is_err());
        assert!(lp_to_linf(&[1.0], &[1.0], &[2.0, 8.0]).is_err());
    }
}
