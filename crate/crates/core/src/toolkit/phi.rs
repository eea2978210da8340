//! The truncation family phi_n: |r|^p on (-n, n), quadratic continuation outside.

use serde::Serialize;

use crate::error::{usage, Result};

/// Relative slack for inequalities that hold with equality on a branch.
const REL_SLACK: f64 = 1e-12;

/// A C^2 convex potential with its first two derivatives.
pub trait Potential: Sync {
    fn value(&self, r: f64) -> f64;
    fn d1(&self, r: f64) -> f64;
    fn d2(&self, r: f64) -> f64;
    fn exponent(&self) -> f64;
}

pub(crate) fn power_value(r: f64, p: f64) -> f64 {
    r.abs().powf(p)
}

pub(crate) fn power_d1(r: f64, p: f64) -> f64 {
    p * r.abs().powf(p - 2.0) * r
}

pub(crate) fn power_d2(r: f64, p: f64) -> f64 {
    p * (p - 1.0) * r.abs().powf(p - 2.0)
}

/// r -> |r|^p.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerPotential {
    p: f64,
}

impl PowerPotential {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(usage(format!("exponent p must be finite and >= 2, got {p}")));
        }
        Ok(Self { p })
    }
}

impl Potential for PowerPotential {
    fn value(&self, r: f64) -> f64 {
        power_value(r, self.p)
    }
    fn d1(&self, r: f64) -> f64 {
        power_d1(r, self.p)
    }
    fn d2(&self, r: f64) -> f64 {
        power_d2(r, self.p)
    }
    fn exponent(&self) -> f64 {
        self.p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncationFamily {
    n: f64,
    p: f64,
}

impl TruncationFamily {
    pub fn new(n: f64, p: f64) -> Result<Self> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(usage(format!("truncation level n must be positive, got {n}")));
        }
        if !(p >= 2.0 && p.is_finite()) {
            return Err(usage(format!("exponent p must be finite and >= 2, got {p}")));
        }
        Ok(Self { n, p })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// M with |phi| <= M r^2, |phi'| <= M |r|, |phi''| <= M.
    pub fn quad_constant(&self) -> f64 {
        self.p * (self.p - 1.0) * self.n.powf(self.p - 2.0)
    }

    /// N with |phi| <= N |r|^p, |phi'| <= N |r|^(p-1), |phi''| <= N |r|^(p-2).
    pub fn power_constant(&self) -> f64 {
        self.p * (self.p - 1.0)
    }

    pub fn eval(&self, r: f64, order: u8) -> f64 {
        if r.abs() < self.n {
            inner_branch(r, self.p, order)
        } else {
            outer_branch(r, self.n, self.p, order)
        }
    }
}

impl Potential for TruncationFamily {
    fn value(&self, r: f64) -> f64 {
        self.eval(r, 0)
    }
    fn d1(&self, r: f64) -> f64 {
        self.eval(r, 1)
    }
    fn d2(&self, r: f64) -> f64 {
        self.eval(r, 2)
    }
    fn exponent(&self) -> f64 {
        self.p
    }
}

/// phi_n^(order)(r); orders above 2 are rejected.
pub fn phi(fam: &TruncationFamily, r: f64, order: u8) -> Result<f64> {
    if order > 2 {
        return Err(usage(format!("derivative order must be 0, 1 or 2, got {order}")));
    }
    Ok(fam.eval(r, order))
}

pub fn inner_branch(r: f64, p: f64, order: u8) -> f64 {
    match order {
        0 => power_value(r, p),
        1 => power_d1(r, p),
        _ => power_d2(r, p),
    }
}

pub fn outer_branch(r: f64, n: f64, p: f64, order: u8) -> f64 {
    let u = r.abs() - n;
    let a = n.powf(p - 2.0);
    match order {
        0 => a * p * (p - 1.0) / 2.0 * u * u + p * n.powf(p - 1.0) * u + n.powf(p),
        1 => r.signum() * (a * p * (p - 1.0) * u + p * n.powf(p - 1.0)),
        _ => a * p * (p - 1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub name: &'static str,
    /// Smallest relative margin (rhs - lhs) / scale seen; negative means violated.
    pub worst_margin: f64,
    pub worst_r: f64,
    pub passed: bool,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiReport {
    pub n: f64,
    pub p: f64,
    pub quad_constant: f64,
    pub power_constant: f64,
    pub checks: Vec<InequalityCheck>,
    pub passed: bool,
}

impl PhiReport {
    pub fn failures(&self) -> Vec<&InequalityCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    at: f64,
    skipped: bool,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self { name, worst: f64::INFINITY, at: f64::NAN, skipped: false }
    }

    /// Records lhs <= rhs.
    fn le(&mut self, r: f64, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        self.record(r, (rhs - lhs) / scale);
    }

    fn record(&mut self, r: f64, margin: f64) {
        if margin < self.worst || self.worst.is_nan() {
            self.worst = margin;
            self.at = r;
        }
    }

    fn finish(self) -> InequalityCheck {
        InequalityCheck {
            name: self.name,
            worst_margin: if self.skipped { 0.0 } else { self.worst },
            worst_r: self.at,
            passed: self.skipped || self.worst >= -REL_SLACK,
            skipped: self.skipped,
        }
    }
}

/// Checks every inequality of the family on the sample.
pub fn check_phi_properties(fam: &TruncationFamily, sample: &[f64]) -> Result<PhiReport> {
    if sample.is_empty() {
        return Err(usage("phi property check needs a nonempty sample"));
    }
    let (n, p) = (fam.n, fam.p);
    let (mq, np) = (fam.quad_constant(), fam.power_constant());
    let mut r_phi1 = Tracker::new("abs_r_dphi_le_p_phi");
    let mut dphi_sq = Tracker::new("dphi_sq_le_4p_d2phi_phi");
    let mut d2_power = Tracker::new("d2phi_pow_le_scaled_phi");
    let mut d2_nonneg = Tracker::new("d2phi_nonnegative");
    let mut quad = Tracker::new("quadratic_bounds");
    let mut power = Tracker::new("power_bounds");
    let mut limits = Tracker::new("pointwise_limits");
    d2_power.skipped = p == 2.0;

    for &r in sample {
        let (f0, f1, f2) = (fam.eval(r, 0), fam.eval(r, 1), fam.eval(r, 2));
        let a = r.abs();
        r_phi1.le(r, (r * f1).abs(), p * f0);
        dphi_sq.le(r, f1 * f1, 4.0 * p * f2 * f0);
        if !d2_power.skipped {
            // (phi'')^(p/(p-2)) <= [p(p-1)]^(p/(p-2)) phi, compared in logs.
            let lhs = f2.ln() - (p * (p - 1.0)).ln();
            let rhs = (p - 2.0) / p * f0.ln();
            let margin = if lhs == f64::NEG_INFINITY {
                0.0
            } else {
                (rhs - lhs) / lhs.abs().max(rhs.abs()).max(1.0)
            };
            d2_power.record(r, margin);
        }
        d2_nonneg.record(r, if f2 >= 0.0 { 0.0 } else { -1.0 });
        quad.le(r, f0.abs(), mq * r * r);
        quad.le(r, f1.abs(), mq * a);
        quad.le(r, f2.abs(), mq);
        power.le(r, f0.abs(), np * a.powf(p));
        power.le(r, f1.abs(), np * a.powf(p - 1.0));
        power.le(r, f2.abs(), np * a.powf(p - 2.0));
        let big = TruncationFamily { n: 2.0 * a.max(n) + 1.0, p };
        let exact = (0..3u8).all(|o| big.eval(r, o).to_bits() == inner_branch(r, p, o).to_bits());
        limits.record(r, if exact { 0.0 } else { -1.0 });
    }

    let checks: Vec<InequalityCheck> =
        [r_phi1, dphi_sq, d2_power, d2_nonneg, quad, power, limits].into_iter().map(Tracker::finish).collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(PhiReport { n, p, quad_constant: mq, power_constant: np, checks, passed })
}

/// Relative mismatch of the two branches at |r| = n for orders 0, 1, 2.
pub fn branch_mismatch(fam: &TruncationFamily) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, slot) in out.iter_mut().enumerate() {
        let o = o as u8;
        let inner = inner_branch(fam.n, fam.p, o);
        let outer = outer_branch(fam.n, fam.n, fam.p, o);
        *slot = (inner - outer).abs() / inner.abs().max(f64::MIN_POSITIVE);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        let f = TruncationFamily::new(2.0, 2.0).unwrap();
        assert_eq!(f.eval(1.5, 0), 2.25);
        assert_eq!(f.eval(3.0, 0), 9.0);
        let g = TruncationFamily::new(2.0, 4.0).unwrap();
        assert_eq!(g.eval(3.0, 0), 72.0);
        assert!(phi(&g, 1.0, 3).is_err());
    }

    #[test]
    fn quadratic_family_passes() {
        let f = TruncationFamily::new(1.0, 2.0).unwrap();
        let sample: Vec<f64> = (-3..=3).map(f64::from).collect();
        let rep = check_phi_properties(&f, &sample).unwrap();
        assert!(rep.passed, "{:?}", rep.failures());
        assert!(sample.iter().all(|&r| f.eval(r, 2) == 2.0));
    }

    #[test]
    fn inner_branch_once_n_exceeds_r() {
        for n in [8.0, 16.0, 32.0] {
            assert_eq!(TruncationFamily::new(n, 3.0).unwrap().eval(7.0, 0), 343.0);
        }
    }

    #[test]
    fn branches_match_at_n() {
        for (n, p) in [(0.3, 2.5), (2.0, 4.0), (5.0, 7.5), (1.0, 2.0)] {
            let mm = branch_mismatch(&TruncationFamily::new(n, p).unwrap());
            assert!(mm.iter().all(|&e| e < 1e-10), "{mm:?}");
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TruncationFamily::new(0.0, 3.0).is_err());
        assert!(TruncationFamily::new(1.0, 1.5).is_err());
        assert!(check_phi_properties(&TruncationFamily::new(1.0, 3.0).unwrap(), &[]).is_err());
    }
}
