//! Second-order Taylor splitting f(s) = f'(0) s + s^2 G(s) with
//! G(s) = int_0^1 (1 - sigma) f''(sigma s) d sigma.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{usage, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Central-difference step for derivatives of black-box f.
pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_PANELS: usize = 64;
const MAX_SAMPLES: usize = 4097;

// 4-point Gauss-Legendre on [-1, 1].
const GL_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_8, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_8];

#[derive(Clone)]
pub struct NonlinearitySpec {
    f: ScalarFn,
    d1: Option<ScalarFn>,
    d2: Option<ScalarFn>,
    d3: Option<ScalarFn>,
    interval: (f64, f64),
    panels: usize,
    max_d2: f64,
    max_d1: f64,
    max_d3: f64,
    description: String,
}

impl fmt::Debug for NonlinearitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearitySpec")
            .field("description", &self.description)
            .field("interval", &self.interval)
            .field("panels", &self.panels)
            .field("max_d1", &self.max_d1)
            .field("max_d2", &self.max_d2)
            .finish()
    }
}

impl NonlinearitySpec {
    /// Black-box f; derivatives by central differences.
    pub fn new(f: ScalarFn, interval: (f64, f64)) -> Result<Self> {
        Self::build(f, None, None, None, interval, "black-box".into())
    }

    pub fn with_derivatives(f: ScalarFn, d1: ScalarFn, d2: ScalarFn, interval: (f64, f64)) -> Result<Self> {
        Self::build(f, Some(d1), Some(d2), None, interval, "analytic".into())
    }

    /// f(s) = sum_k coeffs[k] s^k with analytic derivatives; coeffs[0] must vanish.
    pub fn polynomial(coeffs: &[f64], interval: (f64, f64)) -> Result<Self> {
        let c: Arc<[f64]> = coeffs.into();
        let deriv = |c: &[f64]| -> Vec<f64> { c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect() };
        let c1: Arc<[f64]> = deriv(&c).into();
        let c2: Arc<[f64]> = deriv(&c1).into();
        let c3: Arc<[f64]> = deriv(&c2).into();
        let horner = |c: Arc<[f64]>| -> ScalarFn { Arc::new(move |s| c.iter().rev().fold(0.0, |acc, a| acc * s + a)) };
        Self::build(
            horner(c.clone()),
            Some(horner(c1)),
            Some(horner(c2)),
            Some(horner(c3)),
            interval,
            format!("polynomial {coeffs:?}"),
        )
    }

    /// f(s) = lambda s.
    pub fn linear(lambda: f64, interval: (f64, f64)) -> Result<Self> {
        Self::polynomial(&[0.0, lambda], interval)
    }

    fn build(
        f: ScalarFn,
        d1: Option<ScalarFn>,
        d2: Option<ScalarFn>,
        d3: Option<ScalarFn>,
        interval: (f64, f64),
        description: String,
    ) -> Result<Self> {
        let (lo, hi) = interval;
        if !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && 0.0 <= hi && lo < hi) {
            return Err(usage(format!("interval [{lo}, {hi}] must be bounded and contain 0")));
        }
        let f0 = f(0.0);
        if f0.abs() > 1e-12 {
            return Err(usage(format!("nonlinearity must vanish at 0, got f(0) = {f0}")));
        }
        let mut spec = Self {
            f,
            d1,
            d2,
            d3,
            interval,
            panels: DEFAULT_PANELS,
            max_d2: 0.0,
            max_d1: 0.0,
            max_d3: 0.0,
            description,
        };
        let (mut m1, mut m2, mut m3) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..MAX_SAMPLES {
            let s = lo + (hi - lo) * i as f64 / (MAX_SAMPLES - 1) as f64;
            m1 = m1.max(spec.d1(s).abs());
            m2 = m2.max(spec.d2(s).abs());
            m3 = m3.max(spec.d3(s).abs());
        }
        m1 = m1.max(spec.d1(0.0).abs());
        m2 = m2.max(spec.d2(0.0).abs());
        if !(m1.is_finite() && m2.is_finite()) {
            return Err(usage("derivatives of the nonlinearity are not finite on the interval"));
        }
        spec.max_d1 = m1;
        spec.max_d2 = m2;
        spec.max_d3 = m3;
        Ok(spec)
    }

    pub fn with_panels(mut self, panels: usize) -> Result<Self> {
        if panels < 8 {
            return Err(usage(format!("quadrature needs at least 8 panels, got {panels}")));
        }
        self.panels = panels;
        Ok(self)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn d1(&self, s: f64) -> f64 {
        match &self.d1 {
            Some(d) => d(s),
            None => ((self.f)(s + FD_STEP) - (self.f)(s - FD_STEP)) / (2.0 * FD_STEP),
        }
    }

    pub fn d2(&self, s: f64) -> f64 {
        match &self.d2 {
            Some(d) => d(s),
            None => ((self.f)(s + FD_STEP) - 2.0 * (self.f)(s) + (self.f)(s - FD_STEP)) / (FD_STEP * FD_STEP),
        }
    }

    /// Only used for the diagnostic max |f'''|; a coarser step keeps the
    /// nested difference quotient out of rounding noise.
    fn d3(&self, s: f64) -> f64 {
        match &self.d3 {
            Some(d) => d(s),
            None => {
                let h = 1e-3;
                (self.d2(s + h) - self.d2(s - h)) / (2.0 * h)
            }
        }
    }

    /// M = max over I of |f''|.
    pub fn m(&self) -> f64 {
        self.max_d2
    }

    /// M1 = max over I of |f'|.
    pub fn m1(&self) -> f64 {
        self.max_d1
    }

    /// max over I of |f'''|, reported for comparison with M1.
    pub fn m3(&self) -> f64 {
        self.max_d3
    }

    pub fn slope_at_zero(&self) -> f64 {
        self.d1(0.0)
    }

    /// G(s) by composite Gauss-Legendre quadrature.
    pub fn g(&self, s: f64) -> f64 {
        let width = 1.0 / self.panels as f64;
        let mut acc = 0.0;
        for i in 0..self.panels {
            let mid = (i as f64 + 0.5) * width;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let sigma = mid + 0.5 * width * x;
                acc += w * (1.0 - sigma) * self.d2(sigma * s);
            }
        }
        0.5 * width * acc
    }

    /// f(s) - f'(0) s - s^2 G(s).
    pub fn taylor_defect(&self, s: f64) -> f64 {
        self.eval(s) - self.slope_at_zero() * s - s * s * self.g(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GBoundsReport {
    pub m: f64,
    pub m1: f64,
    pub m3: f64,
    pub max_abs_g: f64,
    /// Smallest (rhs - lhs) / scale over the two-point bound.
    pub worst_pair_margin: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub passed: bool,
}

/// Checks |G(s)| <= M and
/// |s1^2 G(s1) - s2^2 G(s2)| <= M |s1 - s2| (|s1| + |s2|) + M1 s2^2 |s1 - s2|.
pub fn check_g_bounds(spec: &NonlinearitySpec, pairs: &[(f64, f64)]) -> Result<GBoundsReport> {
    let (lo, hi) = spec.interval;
    let (m, m1) = (spec.m(), spec.m1());
    let mut max_abs_g: f64 = 0.0;
    let mut worst = f64::INFINITY;
    let mut worst_pair = None;
    let mut g_ok = true;
    for &(s1, s2) in pairs {
        if !(lo <= s1 && s1 <= hi && lo <= s2 && s2 <= hi) {
            return Err(usage(format!("sample pair ({s1}, {s2}) leaves the interval [{lo}, {hi}]")));
        }
        let (g1, g2) = (spec.g(s1), spec.g(s2));
        max_abs_g = max_abs_g.max(g1.abs()).max(g2.abs());
        g_ok &= g1.abs() <= m * (1.0 + 1e-12) && g2.abs() <= m * (1.0 + 1e-12);
        let lhs = (s1 * s1 * g1 - s2 * s2 * g2).abs();
        let d = (s1 - s2).abs();
        let rhs = m * d * (s1.abs() + s2.abs()) + m1 * s2 * s2 * d;
        let margin = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { (rhs - lhs) / lhs.max(rhs) };
        if margin < worst {
            worst = margin;
            worst_pair = Some((s1, s2));
        }
    }
    let passed = g_ok && worst >= -1e-9;
    Ok(GBoundsReport { m, m1, m3: spec.m3(), max_abs_g, worst_pair_margin: worst, worst_pair, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_unit_g() {
        let f = NonlinearitySpec::polynomial(&[0.0, 0.0, 1.0], (-2.0, 2.0)).unwrap();
        for s in [-2.0, -0.3, 0.0, 1.7] {
            assert!((f.g(s) - 1.0).abs() < 1e-14);
        }
        assert_eq!(f.m(), 2.0);
        let rep = check_g_bounds(&f, &[(0.5, 0.5), (-1.0, 2.0)]).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn cube_at_two() {
        let f = NonlinearitySpec::polynomial(&[0.0, 0.0, 0.0, 1.0], (-2.0, 2.0)).unwrap();
        assert!((f.g(2.0) - 2.0).abs() < 1e-13);
        assert!(f.taylor_defect(2.0).abs() < 1e-12);
    }

    #[test]
    fn sine_at_origin() {
        let f = NonlinearitySpec::with_derivatives(
            Arc::new(f64::sin),
            Arc::new(f64::cos),
            Arc::new(|s: f64| -s.sin()),
            (-1.0, 1.0),
        )
        .unwrap();
        assert_eq!(f.g(0.0), 0.0);
        assert_eq!(f.taylor_defect(0.0), 0.0);
    }

    #[test]
    fn rejects_nonzero_at_origin_and_few_panels() {
        assert!(NonlinearitySpec::polynomial(&[1.0, 1.0], (-1.0, 1.0)).is_err());
        assert!(NonlinearitySpec::polynomial(&[0.0, 1.0], (0.5, 1.0)).is_err());
        let f = NonlinearitySpec::polynomial(&[0.0, 1.0], (-1.0, 1.0)).unwrap();
        assert!(f.with_panels(4).is_err());
    }

    #[test]
    fn finite_difference_path() {
        let f = NonlinearitySpec::new(Arc::new(|s: f64| s.exp() - 1.0), (-1.0, 1.0)).unwrap();
        assert!((f.slope_at_zero() - 1.0).abs() < 1e-9);
        assert!((f.m() - 1f64.exp()).abs() < 1e-4);
    }
}
