//! Null controls for dy = -(Delta y + alpha y + chi h) dt + Y dW with beta = 0.
//!
//! The adjoint runs forward, (I - dt (Delta_h + alpha_n)) q_{n+1} = q_n, and is
//! predictable: q_{n+1} is stored at the level-n node whose alpha it used.
//! Summation by parts over the tree gives, for every q_0 and every h,
//!   E<y_T, q_N> - <y_0, q_0> = -dt sum_n E<chi h_n, q_{n+1}>.

mod observability;
mod synthesis;
mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::field::{AdaptedField, LevelSlice};
use crate::grid::Discretization;
use crate::solver::{solve_linear, CoefficientSet, ProblemData};
use crate::tree::{AdaptedRv, ScenarioTree};

pub use observability::{estimate_observability, observability_ratio, ObservabilityReport};
pub use synthesis::{exponent_ladder, synthesize_control, LadderEntry, LadderReport};
pub use verify::{
    cost_blowup_study, input_to_state_norm, sensitivity_study, verify_control, BlowupReport, SensitivityReport,
    VerificationReport,
};

/// Default feasibility tolerance on ||y(0)||.
pub const DEFAULT_Y0_TOL: f64 = 1e-6;
/// Default iteration cap for the optimizers.
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Default relative step below which the descent stops.
pub const DEFAULT_STEP_TOL: f64 = 1e-9;

/// Sigma-algebra allowed for the adjoint's initial state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMeasurability {
    /// q_0 is a fixed vector.
    Deterministic,
    /// q_0 may be any F_T-measurable field. Only its mean enters the pairing
    /// with y(0), which is deterministic.
    Terminal,
}

#[derive(Clone, Debug)]
pub struct ControlProblem {
    tree: ScenarioTree,
    disc: Discretization,
    coeffs: CoefficientSet,
    terminal: LevelSlice,
    p: f64,
    pub measurability: InitialMeasurability,
    pub y0_tol: f64,
    pub max_iter: usize,
    pub step_tol: f64,
}

impl ControlProblem {
    /// `alpha` on levels 0..N-1, terminal state at level N, p in [2, inf].
    pub fn new(tree: ScenarioTree, disc: Discretization, alpha: AdaptedField, terminal: LevelSlice, p: f64) -> Result<Self> {
        let beta = AdaptedField::zeros(&tree, disc.m(), tree.levels());
        let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta)?;
        Self::from_coefficients(tree, disc, coeffs, terminal, p)
    }

    /// Rejects coefficient sets with beta != 0.
    pub fn from_coefficients(
        tree: ScenarioTree,
        disc: Discretization,
        coeffs: CoefficientSet,
        terminal: LevelSlice,
        p: f64,
    ) -> Result<Self> {
        if !coeffs.beta_is_zero() {
            return Err(Error::Unsupported(
                "null-control synthesis assumes beta = 0; remove the beta coefficient".into(),
            ));
        }
        if !(p >= 2.0) {
            return Err(usage(format!("control exponent must lie in [2, inf], got {p}")));
        }
        if disc.mask_len() == 0 {
            return Err(Error::Config(format!(
                "control interval {:?} contains no grid point",
                disc.control_interval()
            )));
        }
        if tree.is_recombining() && !level_constant(&tree, coeffs.alpha()) {
            return Err(Error::Unsupported(
                "a random alpha makes the adjoint path dependent; use a full tree".into(),
            ));
        }
        // Validates shapes, finiteness and step size once.
        ProblemData::new(&tree, &disc, terminal.clone(), AdaptedField::zeros(&tree, disc.m(), tree.levels()))?;
        crate::solver::check_stability(&tree, &disc, &coeffs)?;
        Ok(Self {
            tree,
            disc,
            coeffs,
            terminal,
            p,
            measurability: InitialMeasurability::Deterministic,
            y0_tol: DEFAULT_Y0_TOL,
            max_iter: DEFAULT_MAX_ITER,
            step_tol: DEFAULT_STEP_TOL,
        })
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    pub fn alpha(&self) -> &AdaptedField {
        self.coeffs.alpha()
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn terminal(&self) -> &LevelSlice {
        &self.terminal
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Same problem with another exponent.
    pub fn with_p(&self, p: f64) -> Result<Self> {
        if !(p >= 2.0) {
            return Err(usage(format!("control exponent must lie in [2, inf], got {p}")));
        }
        Ok(Self { p, ..self.clone() })
    }

    /// Same problem with the terminal state scaled.
    pub fn with_terminal(&self, terminal: LevelSlice) -> Result<Self> {
        terminal.check(&self.tree, self.tree.levels(), self.disc.m(), "terminal data")?;
        Ok(Self { terminal, ..self.clone() })
    }

    /// y(0) for the given terminal state and source chi h.
    pub(crate) fn initial_state(&self, terminal: &LevelSlice, control: &AdaptedField) -> Result<Vec<f64>> {
        let source = restrict_to_mask(&self.disc, control);
        let data = ProblemData::new(&self.tree, &self.disc, terminal.clone(), source)?;
        let sol = solve_linear(&self.tree, &self.disc, &self.coeffs, &data)?;
        Ok(sol.y.level(0).node(0).to_vec())
    }

    pub(crate) fn zero_control(&self) -> AdaptedField {
        AdaptedField::zeros(&self.tree, self.disc.m(), self.tree.levels())
    }

    pub(crate) fn zero_terminal(&self) -> LevelSlice {
        LevelSlice::zeros(&self.tree, self.tree.levels(), self.disc.m())
    }

    /// Reduces an admissible initial state to the vector that drives the adjoint.
    pub fn reduce_initial_state(&self, q0: &LevelSlice) -> Result<Vec<f64>> {
        match (self.measurability, q0.level()) {
            (_, 0) => Ok(q0.node(0).to_vec()),
            (InitialMeasurability::Terminal, level) if level <= self.tree.levels() => {
                let m = self.disc.m();
                let mut out = vec![0.0; m];
                for (j, o) in out.iter_mut().enumerate() {
                    let rv = AdaptedRv::new(level, (0..self.tree.node_count(level)).map(|k| q0.node(k)[j]).collect());
                    *o = self.tree.expectation(&rv);
                }
                Ok(out)
            }
            (InitialMeasurability::Deterministic, level) => Err(usage(format!(
                "deterministic adjoint initial state must live at level 0, got level {level}"
            ))),
            (_, level) => Err(usage(format!("initial state level {level} beyond tree depth"))),
        }
    }
}

fn level_constant(tree: &ScenarioTree, field: &AdaptedField) -> bool {
    (0..tree.levels()).all(|n| {
        let s = field.level(n);
        (1..s.node_count()).all(|k| s.node(k) == s.node(0))
    })
}

/// Level-(n-1) node whose stored adjoint feeds level-n node k.
pub(crate) fn parent(tree: &ScenarioTree, n: usize, k: usize) -> usize {
    if tree.is_recombining() {
        k.min(n - 1)
    } else {
        k / 2
    }
}

/// Forward adjoint from q_0. Level n of the result holds q_{n+1}, for n = 0..N-1.
pub fn solve_forward(tree: &ScenarioTree, disc: &Discretization, alpha: &AdaptedField, q0: &[f64]) -> Result<AdaptedField> {
    let m = disc.m();
    if q0.len() != m {
        return Err(usage(format!("adjoint initial state needs {m} values, got {}", q0.len())));
    }
    alpha.check(tree, m, tree.levels(), "alpha")?;
    let dt = tree.dt();
    let mut slices: Vec<LevelSlice> = Vec::with_capacity(tree.levels());
    let mut scratch = Vec::new();
    for n in 0..tree.levels() {
        let mut s = LevelSlice::zeros(tree, n, m);
        for k in 0..tree.node_count(n) {
            let rhs = if n == 0 { q0 } else { slices[n - 1].node(parent(tree, n, k)) };
            let rhs = rhs.to_vec();
            disc.solve_shifted(dt, alpha.level(n).node(k), &rhs, s.node_mut(k), &mut scratch);
        }
        slices.push(s);
    }
    AdaptedField::from_slices(m, slices)
}

/// Zeroes a field off the control mask.
pub fn restrict_to_mask(disc: &Discretization, field: &AdaptedField) -> AdaptedField {
    let mask = disc.mask().to_vec();
    let m = disc.m();
    let mut out = field.clone();
    for n in 0..out.len() {
        for (i, v) in out.level_mut(n).values_mut().iter_mut().enumerate() {
            if !mask[i % m] {
                *v = 0.0;
            }
        }
    }
    out
}

/// Discrete norm of L^p(Omega x (0,T) x O_0): (dt sum_n E sum_{mask} h |v|^p)^(1/p), or the max for p = inf.
pub fn control_norm(tree: &ScenarioTree, disc: &Discretization, field: &AdaptedField, p: f64) -> f64 {
    let m = disc.m();
    let mask = disc.mask();
    if p.is_infinite() {
        let mut worst: f64 = 0.0;
        for s in field.slices() {
            for (i, v) in s.values().iter().enumerate() {
                if mask[i % m] {
                    worst = worst.max(v.abs());
                }
            }
        }
        return worst;
    }
    let mut acc = 0.0;
    for (n, s) in field.slices().iter().enumerate() {
        for k in 0..s.node_count() {
            let node: f64 = s.node(k).iter().zip(mask).filter(|(_, &b)| b).map(|(v, _)| v.abs().powf(p)).sum();
            acc += tree.probability(n, k) * node;
        }
    }
    (tree.dt() * disc.h() * acc).powf(1.0 / p)
}

/// E<y_T, q_N>, with q_N read from the level-(N-1) storage.
pub fn terminal_pairing(tree: &ScenarioTree, disc: &Discretization, terminal: &LevelSlice, q: &AdaptedField) -> f64 {
    let big_n = tree.levels();
    let mut acc = 0.0;
    for k in 0..tree.node_count(big_n) {
        acc += tree.probability(big_n, k) * disc.inner(terminal.node(k), q.level(big_n - 1).node(parent(tree, big_n, k)));
    }
    acc
}

/// dt sum_n E<chi h_n, q_{n+1}>.
pub fn control_pairing(tree: &ScenarioTree, disc: &Discretization, h: &AdaptedField, q: &AdaptedField) -> f64 {
    let mask = disc.mask();
    let mut acc = 0.0;
    for n in 0..tree.levels() {
        for k in 0..tree.node_count(n) {
            let (a, b) = (h.level(n).node(k), q.level(n).node(k));
            let mut s = 0.0;
            for j in 0..disc.m() {
                if mask[j] {
                    s += a[j] * b[j];
                }
            }
            acc += tree.probability(n, k) * s;
        }
    }
    tree.dt() * disc.h() * acc
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlResult {
    pub p: f64,
    pub method: String,
    /// Control on levels 0..N-1, zero off the mask.
    #[serde(skip)]
    pub h: AdaptedField,
    /// Adjoint initial state representing the control, when one is available.
    pub q0: Option<Vec<f64>>,
    pub cost_p: f64,
    pub cost_inf: f64,
    pub y0_residual: f64,
    /// max |E<y_T, q_N> + dt sum E<chi h, q>| over adjoints started from the
    /// normalized sine modes; it vanishes exactly for a null control.
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative mismatch between |h|^{p-2} h and the recovered adjoint on the
    /// mask; zero by construction for p = 2, absent for p = inf.
    pub representation_defect: Option<f64>,
}
