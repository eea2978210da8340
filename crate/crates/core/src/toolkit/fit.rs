//! Least-squares line fits for convergence and blow-up studies.

use serde::Serialize;

use crate::error::{usage, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares y = slope x + intercept.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(usage(format!("line fit needs two or more matching points, got {} and {}", xs.len(), ys.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(usage("line fit needs at least two distinct abscissae"));
    }
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: my - slope * mx })
}

/// Order of convergence: slope of log|err| against log(step).
pub fn fitted_order(steps: &[f64], errors: &[f64]) -> Result<f64> {
    if errors.iter().any(|e| !(e.abs() > 0.0) || !e.is_finite()) {
        return Err(usage("convergence order needs nonzero finite errors"));
    }
    let lx: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.abs().ln()).collect();
    Ok(fit_line(&lx, &ly)?.slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let f = fit_line(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_errors_have_order_two() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((fitted_order(&h, &e).unwrap() - 2.0).abs() < 1e-12);
    }
}
