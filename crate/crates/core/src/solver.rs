//! Backward time stepping for
//! dy = -(Delta y + alpha y + beta Y + F) dt + Y dW,  y(T) = y_T,
//! implicit in Delta and alpha, explicit in beta Y and F.
//!
//! At a level-n node with children (up, down):
//!   Y_n = (y_up - y_down) / (2 sqrt(dt)),  m_n = (y_up + y_down) / 2,
//!   (I - dt (Delta_h + alpha_n)) y_n = m_n + dt (beta_n Y_n + F_n).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{AdaptedField, LevelSlice};
use crate::grid::Discretization;
use crate::tree::ScenarioTree;

/// Levels with fewer entries than this are stepped on one thread.
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    alpha: AdaptedField,
    beta: AdaptedField,
    alpha_sup: f64,
    alpha_max: f64,
    beta_sup: f64,
}

impl CoefficientSet {
    /// alpha and beta on levels 0..N-1.
    pub fn new(tree: &ScenarioTree, disc: &Discretization, alpha: AdaptedField, beta: AdaptedField) -> Result<Self> {
        alpha.check(tree, disc.m(), tree.levels(), "alpha")?;
        beta.check(tree, disc.m(), tree.levels(), "beta")?;
        let alpha_max = alpha
            .slices()
            .iter()
            .flat_map(|s| s.values().iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { alpha_sup: alpha.sup_norm(), beta_sup: beta.sup_norm(), alpha_max, alpha, beta })
    }

    pub fn zero(tree: &ScenarioTree, disc: &Discretization) -> Self {
        let z = AdaptedField::zeros(tree, disc.m(), tree.levels());
        Self { alpha: z.clone(), beta: z, alpha_sup: 0.0, alpha_max: 0.0, beta_sup: 0.0 }
    }

    pub fn alpha(&self) -> &AdaptedField {
        &self.alpha
    }

    pub fn beta(&self) -> &AdaptedField {
        &self.beta
    }

    pub fn alpha_sup(&self) -> f64 {
        self.alpha_sup
    }

    pub fn beta_sup(&self) -> f64 {
        self.beta_sup
    }

    /// K = ||alpha||_inf + ||beta||_inf^2.
    pub fn k(&self) -> f64 {
        self.alpha_sup + self.beta_sup * self.beta_sup
    }

    pub fn beta_is_zero(&self) -> bool {
        self.beta_sup == 0.0
    }

    /// alpha + shift, beta unchanged.
    pub fn shifted(&self, shift: f64) -> Self {
        if shift == 0.0 {
            return self.clone();
        }
        let alpha = self.alpha.map(|v| v + shift);
        let alpha_max = self.alpha_max + shift;
        Self { alpha_sup: alpha.sup_norm(), alpha_max, alpha, beta: self.beta.clone(), beta_sup: self.beta_sup }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemData {
    terminal: LevelSlice,
    source: AdaptedField,
}

impl ProblemData {
    /// Terminal values at level N and source on levels 0..N-1.
    pub fn new(tree: &ScenarioTree, disc: &Discretization, terminal: LevelSlice, source: AdaptedField) -> Result<Self> {
        terminal.check(tree, tree.levels(), disc.m(), "terminal data")?;
        source.check(tree, disc.m(), tree.levels(), "source")?;
        Ok(Self { terminal, source })
    }

    pub fn zero(tree: &ScenarioTree, disc: &Discretization) -> Self {
        Self {
            terminal: LevelSlice::zeros(tree, tree.levels(), disc.m()),
            source: AdaptedField::zeros(tree, disc.m(), tree.levels()),
        }
    }

    pub fn terminal(&self) -> &LevelSlice {
        &self.terminal
    }

    pub fn source(&self) -> &AdaptedField {
        &self.source
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { terminal: self.terminal.scaled(lambda), source: self.source.scaled(lambda) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BspdeSolution {
    /// y on levels 0..N.
    pub y: AdaptedField,
    /// The martingale-representation component Y on levels 0..N-1.
    pub z: AdaptedField,
    pub dt: f64,
    /// Max-norm residual of the tridiagonal systems, per level 0..N-1.
    pub solve_residuals: Vec<f64>,
}

impl BspdeSolution {
    pub fn max_solve_residual(&self) -> f64 {
        self.solve_residuals.iter().fold(0.0, |m: f64, r| m.max(*r))
    }
}

/// Rejects step sizes the scheme cannot handle.
pub fn check_stability(tree: &ScenarioTree, disc: &Discretization, coeffs: &CoefficientSet) -> Result<()> {
    let dt = tree.dt();
    let beta_load = dt * coeffs.beta_sup * coeffs.beta_sup;
    if !(beta_load < 1.0) {
        return Err(Error::Config(format!(
            "dt * ||beta||_inf^2 = {beta_load:.6} must be below 1; increase the number of levels"
        )));
    }
    // I - dt (Delta_h + alpha) is positive definite when dt (max alpha - lambda_1) < 1.
    let lambda1 = -disc.eigenvalue(1);
    let alpha_load = dt * (coeffs.alpha_max - lambda1);
    if !(alpha_load < 1.0) {
        return Err(Error::Config(format!(
            "dt * (max alpha - lambda_1) = {alpha_load:.6} must be below 1; increase the number of levels"
        )));
    }
    Ok(())
}

pub fn solve_linear(
    tree: &ScenarioTree,
    disc: &Discretization,
    coeffs: &CoefficientSet,
    data: &ProblemData,
) -> Result<BspdeSolution> {
    let m = disc.m();
    let n_levels = tree.levels();
    coeffs.alpha.check(tree, m, n_levels, "alpha")?;
    coeffs.beta.check(tree, m, n_levels, "beta")?;
    data.terminal.check(tree, n_levels, m, "terminal data")?;
    data.source.check(tree, m, n_levels, "source")?;
    check_stability(tree, disc, coeffs)?;

    let dt = tree.dt();
    let inv_two_sqrt_dt = 1.0 / (2.0 * tree.sqrt_dt());
    let mut y_slices = vec![data.terminal.clone()];
    let mut z_slices = Vec::with_capacity(n_levels);
    let mut solve_residuals = vec![0.0; n_levels];

    for n in (0..n_levels).rev() {
        let next = y_slices.last().expect("terminal slice present");
        let mut y = LevelSlice::zeros(tree, n, m);
        let mut z = LevelSlice::zeros(tree, n, m);
        let alpha = coeffs.alpha.level(n);
        let beta = coeffs.beta.level(n);
        let source = data.source.level(n);

        let step = |k: usize, yk: &mut [f64], zk: &mut [f64], scratch: &mut Vec<f64>, rhs: &mut Vec<f64>| -> f64 {
            let (u, d) = tree.children(n, k);
            let (yu, yd) = (next.node(u), next.node(d));
            let (a, b, f) = (alpha.node(k), beta.node(k), source.node(k));
            rhs.clear();
            for j in 0..m {
                zk[j] = (yu[j] - yd[j]) * inv_two_sqrt_dt;
                let mean = 0.5 * (yu[j] + yd[j]);
                rhs.push(mean + dt * (b[j] * zk[j] + f[j]));
            }
            disc.solve_shifted(dt, a, rhs, yk, scratch)
        };

        let worst = if tree.node_count(n) * m >= PAR_THRESHOLD {
            y.values_mut()
                .par_chunks_mut(m)
                .zip(z.values_mut().par_chunks_mut(m))
                .enumerate()
                .map_init(
                    || (Vec::new(), Vec::new()),
                    |(scratch, rhs), (k, (yk, zk))| step(k, yk, zk, scratch, rhs),
                )
                .reduce(|| 0.0, f64::max)
        } else {
            let (mut scratch, mut rhs) = (Vec::new(), Vec::new());
            let mut worst: f64 = 0.0;
            for (k, (yk, zk)) in y.values_mut().chunks_mut(m).zip(z.values_mut().chunks_mut(m)).enumerate() {
                worst = worst.max(step(k, yk, zk, &mut scratch, &mut rhs));
            }
            worst
        };
        if !y.all_finite() {
            return Err(Error::Data(format!("non-finite state produced at level {n}")));
        }
        solve_residuals[n] = worst;
        y_slices.push(y);
        z_slices.push(z);
    }
    y_slices.reverse();
    z_slices.reverse();
    Ok(BspdeSolution {
        y: AdaptedField::from_slices(m, y_slices)?,
        z: AdaptedField::from_slices(m, z_slices)?,
        dt,
        solve_residuals,
    })
}

/// One-step defects r_n = y_n - m_n - dt (Delta y_n + alpha y_n + beta Y_n + S_n)
/// and their telescoped bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakResidual {
    /// max over nodes of ||r_n||_{L^2}, per level 0..N-1.
    pub per_level: Vec<f64>,
    /// Sum of `per_level`; bounds the telescoped weak-form defect on every
    /// path, for every start level and every unit test vector.
    pub telescoped_bound: f64,
}

/// Weak-form defect with source term `source(n, k, y_nk, out)`.
pub fn weak_residual_with<S>(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    mut source: S,
) -> WeakResidual
where
    S: FnMut(usize, usize, &[f64], &mut [f64]),
{
    let m = disc.m();
    let dt = tree.dt();
    let mut lap = vec![0.0; m];
    let mut s = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut per_level = Vec::with_capacity(tree.levels());
    for n in 0..tree.levels() {
        let mut worst: f64 = 0.0;
        for k in 0..tree.node_count(n) {
            let (u, d) = tree.children(n, k);
            let yk = sol.y.level(n).node(k);
            let (yu, yd) = (sol.y.level(n + 1).node(u), sol.y.level(n + 1).node(d));
            let (a, b, z) = (coeffs.alpha.level(n).node(k), coeffs.beta.level(n).node(k), sol.z.level(n).node(k));
            disc.laplacian_into(yk, &mut lap);
            source(n, k, yk, &mut s);
            for j in 0..m {
                let mean = 0.5 * (yu[j] + yd[j]);
                r[j] = yk[j] - mean - dt * (lap[j] + a[j] * yk[j] + b[j] * z[j] + s[j]);
            }
            worst = worst.max(disc.inner(&r, &r).sqrt());
        }
        per_level.push(worst);
    }
    let telescoped_bound = per_level.iter().sum();
    WeakResidual { per_level, telescoped_bound }
}

pub fn weak_residual(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    coeffs: &CoefficientSet,
    data: &ProblemData,
) -> WeakResidual {
    weak_residual_with(tree, disc, sol, coeffs, |n, k, _, out| {
        out.copy_from_slice(data.source.level(n).node(k));
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_gives_zero() {
        let tree = ScenarioTree::build(4, 1.0, true).unwrap();
        let disc = Discretization::new(8, 1.0).unwrap();
        let sol = solve_linear(&tree, &disc, &CoefficientSet::zero(&tree, &disc), &ProblemData::zero(&tree, &disc)).unwrap();
        assert_eq!(sol.y.sup_norm(), 0.0);
        assert_eq!(sol.z.sup_norm(), 0.0);
        assert_eq!(sol.y.len(), 5);
        assert_eq!(sol.z.len(), 4);
    }

    #[test]
    fn beta_stability_is_enforced() {
        let tree = ScenarioTree::build(2, 4.0, true).unwrap();
        let disc = Discretization::new(4, 1.0).unwrap();
        let alpha = AdaptedField::zeros(&tree, 4, 2);
        let beta = AdaptedField::from_fn(&tree, 4, 2, |_, _, _| 1.0);
        let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta).unwrap();
        let err = solve_linear(&tree, &disc, &coeffs, &ProblemData::zero(&tree, &disc)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let tree = ScenarioTree::build(2, 1.0, true).unwrap();
        let disc = Discretization::new(4, 1.0).unwrap();
        let mut terminal = LevelSlice::zeros(&tree, 2, 4);
        terminal.values_mut()[3] = f64::NAN;
        let err = ProblemData::new(&tree, &disc, terminal, AdaptedField::zeros(&tree, 4, 2)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
