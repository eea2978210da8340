//! Finite-difference discretization of (0, l) with homogeneous Dirichlet
//! boundary values. Interior points are x_j = j h for j = 1..M.

use crate::error::{usage, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Discretization {
    m: usize,
    length: f64,
    h: f64,
    control_interval: (f64, f64),
    mask: Vec<bool>,
}

impl Discretization {
    /// Grid with the default control interval (0.3 l, 0.6 l).
    pub fn new(interior_points: usize, length: f64) -> Result<Self> {
        Self::with_control_interval(interior_points, length, (0.3 * length, 0.6 * length))
    }

    pub fn with_control_interval(
        interior_points: usize,
        length: f64,
        (a, b): (f64, f64),
    ) -> Result<Self> {
        if interior_points < 2 {
            return Err(usage(format!("need at least 2 interior points, got {interior_points}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(usage(format!("domain length must be positive, got {length}")));
        }
        if !(0.0 <= a && a < b && b <= length) {
            return Err(usage(format!("control interval ({a}, {b}) must satisfy 0 <= a < b <= {length}")));
        }
        let h = length / (interior_points + 1) as f64;
        let mask = (1..=interior_points)
            .map(|j| {
                let x = j as f64 * h;
                a < x && x < b
            })
            .collect();
        Ok(Self { m: interior_points, length, h, control_interval: (a, b), mask })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn control_interval(&self) -> (f64, f64) {
        self.control_interval
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Coordinate of interior point `j` (0-based storage index).
    pub fn x(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.h
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.x(j)).collect()
    }

    /// -(4/h^2) sin^2(k pi h / (2 l)), k = 1..M.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let s = (k as f64 * std::f64::consts::PI * self.h / (2.0 * self.length)).sin();
        -4.0 / (self.h * self.h) * s * s
    }

    /// Discrete sine mode k sampled on the grid.
    pub fn sine_mode(&self, k: usize) -> Vec<f64> {
        (0..self.m)
            .map(|j| (k as f64 * std::f64::consts::PI * self.x(j) / self.length).sin())
            .collect()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.m {
            return Err(usage(format!("vector of length {} on a grid of {} points", v.len(), self.m)));
        }
        Ok(())
    }

    pub fn apply_laplacian(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = vec![0.0; self.m];
        self.laplacian_into(v, &mut out);
        Ok(out)
    }

    /// Unchecked stencil for hot loops; `v` and `out` have length M.
    pub(crate) fn laplacian_into(&self, v: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (self.h * self.h);
        let m = self.m;
        for j in 0..m {
            let left = if j > 0 { v[j - 1] } else { 0.0 };
            let right = if j + 1 < m { v[j + 1] } else { 0.0 };
            out[j] = (left - 2.0 * v[j] + right) * inv;
        }
    }

    /// Quadrature inner product sum_j h u_j v_j.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (a, b) in u.iter().zip(v) {
            acc += a * b;
        }
        self.h * acc
    }

    /// (sum_j h |v_j|^p)^(1/p), or max_j |v_j| for p = infinity.
    pub fn lp_norm(&self, v: &[f64], p: f64) -> Result<f64> {
        self.check_len(v)?;
        if !(p >= 1.0) {
            return Err(usage(format!("L^p norm needs p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(sup_abs(v));
        }
        Ok(self.lp_norm_pow(v, p).powf(1.0 / p))
    }

    /// sum_j h |v_j|^p without the root.
    pub fn lp_norm_pow(&self, v: &[f64], p: f64) -> f64 {
        let mut acc = 0.0;
        for x in v {
            acc += x.abs().powf(p);
        }
        self.h * acc
    }

    /// |v|_{H^1_h}^2: forward differences including the jumps to the zero boundary.
    pub fn h1_seminorm_sq(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &x in v.iter().chain(std::iter::once(&0.0)) {
            let d = x - prev;
            acc += d * d;
            prev = x;
        }
        acc / self.h
    }

    pub fn h1_seminorm(&self, v: &[f64]) -> f64 {
        self.h1_seminorm_sq(v).sqrt()
    }

    /// Solves (I - dt (Delta_h + diag(alpha))) y = rhs and returns the max-norm residual.
    pub(crate) fn solve_shifted(&self, dt: f64, alpha: &[f64], rhs: &[f64], y: &mut [f64], scratch: &mut Vec<f64>) -> f64 {
        let off = -dt / (self.h * self.h);
        let diag_base = 1.0 + 2.0 * dt / (self.h * self.h);
        thomas_constant_offdiag(off, |j| diag_base - dt * alpha[j], rhs, y, scratch);
        let mut worst: f64 = 0.0;
        for j in 0..self.m {
            let left = if j > 0 { y[j - 1] } else { 0.0 };
            let right = if j + 1 < self.m { y[j + 1] } else { 0.0 };
            let r = (diag_base - dt * alpha[j]) * y[j] + off * (left + right) - rhs[j];
            worst = worst.max(r.abs());
        }
        worst
    }
}

pub fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Thomas algorithm for a symmetric tridiagonal matrix with constant
/// off-diagonal `off` and diagonal `diag(j)`.
fn thomas_constant_offdiag(off: f64, diag: impl Fn(usize) -> f64, rhs: &[f64], y: &mut [f64], c: &mut Vec<f64>) {
    let m = rhs.len();
    c.clear();
    c.resize(m, 0.0);
    let mut b = diag(0);
    c[0] = off / b;
    y[0] = rhs[0] / b;
    for j in 1..m {
        b = diag(j) - off * c[j - 1];
        c[j] = off / b;
        y[j] = (rhs[j] - off * y[j - 1]) / b;
    }
    for j in (0..m - 1).rev() {
        y[j] -= c[j] * y[j + 1];
    }
}
