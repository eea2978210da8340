//! Picard iteration for dy = -(Delta y + alpha y + beta Y + f(y)) dt + Y dW.
//!
//! Each step freezes the Taylor remainder: the next iterate solves the linear
//! equation with drift alpha + f'(0) and source ybar^2 G(ybar).

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::field::{AdaptedField, LevelSlice};
use crate::grid::Discretization;
use crate::solver::{solve_linear, weak_residual_with, BspdeSolution, CoefficientSet, ProblemData, WeakResidual};
use crate::toolkit::taylor::NonlinearitySpec;
use crate::tree::ScenarioTree;

pub const DIVERGENCE_SUP: f64 = 1e6;
pub const DIVERGENCE_RATIO: f64 = 10.0;
pub const DIVERGENCE_STREAK: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    Zero,
    /// E[y_T | F_n] at every level.
    Terminal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub initial: InitialGuess,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, initial: InitialGuess::Zero }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardStatus {
    Converged,
    MaxIter,
    Diverged,
    BlowUp,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardState {
    pub k: usize,
    /// sup |y_k - y_{k-1}| over nodes, grid points and levels.
    pub difference_sup: f64,
    /// difference_sup + (E sum dt ||Y_k - Y_{k-1}||^2)^{1/2}.
    pub difference_full: f64,
    /// difference_k / difference_{k-1}; absent for k = 1.
    pub contraction_ratio: Option<f64>,
    pub sup_norm: f64,
    pub radius: f64,
    pub smallness: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardRun {
    pub status: PicardStatus,
    pub iterations: usize,
    pub history: Vec<PicardState>,
    /// Last finite iterate.
    #[serde(skip)]
    pub solution: Option<BspdeSolution>,
    /// 2 ||y_1||_inf.
    pub radius: f64,
    pub ball_violations: usize,
    pub max_ratio: Option<f64>,
}

impl PicardRun {
    pub fn converged(&self) -> bool {
        self.status == PicardStatus::Converged
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.history.iter().filter_map(|s| s.contraction_ratio).collect()
    }
}

/// Source ybar^2 G(ybar) on levels 0..N-1.
fn frozen_source(tree: &ScenarioTree, f: &NonlinearitySpec, ybar: &AdaptedField) -> AdaptedField {
    let m = ybar.m();
    let slices = ybar.slices()[..tree.levels()]
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for v in out.values_mut() {
                let y = *v;
                *v = y * y * f.g(y);
            }
            out
        })
        .collect();
    AdaptedField::from_slices(m, slices).expect("levels taken from an adapted field")
}

fn terminal_guess(tree: &ScenarioTree, terminal: &LevelSlice) -> AdaptedField {
    let m = terminal.m();
    let mut slices = vec![terminal.clone()];
    for n in (0..tree.levels()).rev() {
        let next = slices.last().expect("nonempty");
        let s = LevelSlice::from_fn(tree, n, m, |k, j| {
            let (u, d) = tree.children(n, k);
            0.5 * (next.node(u)[j] + next.node(d)[j])
        });
        slices.push(s);
    }
    slices.reverse();
    AdaptedField::from_slices(m, slices).expect("levels built in order")
}

fn z_difference(tree: &ScenarioTree, disc: &Discretization, a: &AdaptedField, b: &AdaptedField) -> f64 {
    let dt = tree.dt();
    let mut acc = 0.0;
    let mut d = vec![0.0; disc.m()];
    for n in 0..tree.levels() {
        for k in 0..tree.node_count(n) {
            for ((x, y), out) in a.level(n).node(k).iter().zip(b.level(n).node(k)).zip(d.iter_mut()) {
                *out = x - y;
            }
            acc += tree.probability(n, k) * dt * disc.inner(&d, &d);
        }
    }
    acc.sqrt()
}

pub fn picard_solve(
    tree: &ScenarioTree,
    disc: &Discretization,
    coeffs: &CoefficientSet,
    f: &NonlinearitySpec,
    terminal: &LevelSlice,
    opts: &PicardOptions,
) -> Result<PicardRun> {
    terminal.check(tree, tree.levels(), disc.m(), "terminal data")?;
    if !terminal.all_finite() {
        return Err(usage("terminal data must be finite"));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(usage(format!("need tol > 0 and max_iter >= 1, got {} and {}", opts.tol, opts.max_iter)));
    }
    let m = disc.m();
    let shifted = coeffs.shifted(f.slope_at_zero());
    let smallness = terminal.sup_norm();

    let mut ybar = match opts.initial {
        InitialGuess::Zero => AdaptedField::zeros(tree, m, tree.levels() + 1),
        InitialGuess::Terminal => terminal_guess(tree, terminal),
    };
    let mut zbar = AdaptedField::zeros(tree, m, tree.levels());
    let mut history: Vec<PicardState> = Vec::new();
    let mut solution = None;
    let mut radius = f64::NAN;
    let mut streak = 0;
    let mut status = PicardStatus::MaxIter;

    for k in 1..=opts.max_iter {
        let source = frozen_source(tree, f, &ybar);
        if !source.slices().iter().all(|s| s.all_finite()) {
            status = PicardStatus::BlowUp;
            break;
        }
        let data = ProblemData::new(tree, disc, terminal.clone(), source)?;
        let sol = match solve_linear(tree, disc, &shifted, &data) {
            Ok(s) => s,
            Err(Error::Data(_)) => {
                status = PicardStatus::BlowUp;
                break;
            }
            Err(e) => return Err(e),
        };
        let difference_sup = sol.y.max_abs_diff(&ybar);
        let difference_full = difference_sup + z_difference(tree, disc, &sol.z, &zbar);
        let sup_norm = sol.y.sup_norm();
        if k == 1 {
            radius = 2.0 * sup_norm;
        }
        let contraction_ratio = history.last().map(|prev| {
            if prev.difference_sup == 0.0 {
                0.0
            } else {
                difference_sup / prev.difference_sup
            }
        });
        history.push(PicardState { k, difference_sup, difference_full, contraction_ratio, sup_norm, radius, smallness });
        ybar = sol.y.clone();
        zbar = sol.z.clone();
        solution = Some(sol);

        if !difference_sup.is_finite() {
            status = PicardStatus::BlowUp;
            break;
        }
        if difference_sup <= opts.tol {
            status = PicardStatus::Converged;
            break;
        }
        streak = match contraction_ratio {
            Some(r) if r > DIVERGENCE_RATIO => streak + 1,
            _ => 0,
        };
        if sup_norm > DIVERGENCE_SUP || streak >= DIVERGENCE_STREAK {
            status = PicardStatus::Diverged;
            break;
        }
    }

    let ball_violations = history.iter().filter(|s| s.sup_norm > radius).count();
    let max_ratio = history.iter().filter_map(|s| s.contraction_ratio).reduce(f64::max);
    Ok(PicardRun { status, iterations: history.len(), history, solution, radius, ball_violations, max_ratio })
}

/// Weak-form defect of `sol` against the semilinear equation with the true f.
pub fn verify_semilinear(
    tree: &ScenarioTree,
    disc: &Discretization,
    sol: &BspdeSolution,
    f: &NonlinearitySpec,
    coeffs: &CoefficientSet,
) -> WeakResidual {
    weak_residual_with(tree, disc, sol, coeffs, |_, _, y, out| {
        for (o, &v) in out.iter_mut().zip(y) {
            *o = f.eval(v);
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub amplitude: f64,
    pub status: PicardStatus,
    pub iterations: usize,
    pub max_ratio: Option<f64>,
    /// Ratio of the second step; the least noisy estimate of the contraction factor.
    pub leading_ratio: Option<f64>,
    pub ball_violations: usize,
}

impl ProbeEntry {
    pub fn contracted(&self) -> bool {
        self.status == PicardStatus::Converged && self.max_ratio.is_none_or(|r| r < 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub entries: Vec<ProbeEntry>,
    pub largest_contracting: Option<f64>,
    /// None means no failure in the ladder.
    pub smallest_failing: Option<f64>,
    /// Leading ratios non-decreasing in amplitude, failed runs counting as +inf.
    pub monotone_degradation: bool,
}

pub fn smallness_probe(
    tree: &ScenarioTree,
    disc: &Discretization,
    coeffs: &CoefficientSet,
    f: &NonlinearitySpec,
    direction: &LevelSlice,
    amplitudes: &[f64],
    opts: &PicardOptions,
) -> Result<ProbeReport> {
    if amplitudes.is_empty() || amplitudes.windows(2).any(|w| w[0] >= w[1]) || amplitudes[0] < 0.0 {
        return Err(usage("amplitudes must be nonnegative and strictly increasing"));
    }
    let scale = direction.sup_norm();
    if scale == 0.0 {
        return Err(usage("terminal direction is identically zero"));
    }
    let mut entries = Vec::with_capacity(amplitudes.len());
    for &a in amplitudes {
        let run = picard_solve(tree, disc, coeffs, f, &direction.scaled(a / scale), opts)?;
        let leading_ratio = run.history.get(1).and_then(|s| s.contraction_ratio);
        entries.push(ProbeEntry {
            amplitude: a,
            status: run.status,
            iterations: run.iterations,
            max_ratio: run.max_ratio,
            leading_ratio,
            ball_violations: run.ball_violations,
        });
    }
    let largest_contracting = entries.iter().filter(|e| e.contracted()).map(|e| e.amplitude).reduce(f64::max);
    let smallest_failing = entries.iter().find(|e| !e.contracted()).map(|e| e.amplitude);
    let key = |e: &ProbeEntry| if e.contracted() { e.leading_ratio.unwrap_or(0.0) } else { f64::INFINITY };
    let monotone_degradation = entries.windows(2).all(|w| key(&w[0]) <= key(&w[1]));
    Ok(ProbeReport { entries, largest_contracting, smallest_failing, monotone_degradation })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ScenarioTree, Discretization) {
        (ScenarioTree::build(4, 1.0, true).unwrap(), Discretization::new(8, 1.0).unwrap())
    }

    #[test]
    fn zero_terminal_converges_at_once() {
        let (tree, disc) = setup();
        let f = NonlinearitySpec::polynomial(&[0.0, 0.0, 0.0, 1.0], (-1.0, 1.0)).unwrap();
        let yt = LevelSlice::zeros(&tree, 4, 8);
        let run =
            picard_solve(&tree, &disc, &CoefficientSet::zero(&tree, &disc), &f, &yt, &PicardOptions::default()).unwrap();
        assert_eq!(run.status, PicardStatus::Converged);
        assert_eq!(run.iterations, 1);
        assert_eq!(run.solution.unwrap().y.sup_norm(), 0.0);
    }

    #[test]
    fn terminal_guess_is_martingale() {
        let (tree, _) = setup();
        let yt = LevelSlice::from_fn(&tree, 4, 2, |k, j| (k + j) as f64);
        let g = terminal_guess(&tree, &yt);
        assert_eq!(g.len(), 5);
        assert_eq!(g.level(4), &yt);
        assert_eq!(g.level(0).node(0), &[2.0, 3.0]);
    }

    #[test]
    fn probe_rejects_bad_ladder() {
        let (tree, disc) = setup();
        let f = NonlinearitySpec::linear(0.0, (-1.0, 1.0)).unwrap();
        let d = LevelSlice::from_fn(&tree, 4, 8, |_, _| 1.0);
        let c = CoefficientSet::zero(&tree, &disc);
        assert!(smallness_probe(&tree, &disc, &c, &f, &d, &[0.2, 0.1], &PicardOptions::default()).is_err());
    }
}
