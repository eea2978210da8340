//! Turns config sections into trees, grids and fields.

use super::config::{ExperimentConfig, FieldSpec, GridSpec, TreeSpec};
use super::expr::Env;
use super::random::{generate_random_field, generate_random_terminal, FieldKind};
use crate::error::Result;
use crate::field::{AdaptedField, LevelSlice};
use crate::grid::Discretization;
use crate::solver::{CoefficientSet, ProblemData};
use crate::tree::ScenarioTree;

pub fn build_tree(spec: &TreeSpec) -> Result<ScenarioTree> {
    ScenarioTree::build(spec.levels, spec.horizon, spec.recombining)
}

pub fn build_grid(spec: &GridSpec) -> Result<Discretization> {
    match spec.control_interval {
        Some([a, b]) => Discretization::with_control_interval(spec.interior_points, spec.length, (a, b)),
        None => Discretization::new(spec.interior_points, spec.length),
    }
}

fn env(tree: &ScenarioTree, disc: &Discretization, n: usize, k: usize, j: usize) -> Env {
    Env { x: disc.x(j), t: tree.time(n), w: tree.brownian(n, k), s: 0.0 }
}

/// Field on levels 0..N-1.
pub fn adapted_field(spec: &FieldSpec, seed: u64, kind: FieldKind, tree: &ScenarioTree, disc: &Discretization) -> AdaptedField {
    let m = disc.m();
    match spec {
        FieldSpec::Zero => AdaptedField::zeros(tree, m, tree.levels()),
        FieldSpec::Constant(c) => AdaptedField::from_fn(tree, m, tree.levels(), |_, _, _| *c),
        FieldSpec::Formula(f) => AdaptedField::from_fn(tree, m, tree.levels(), |n, k, j| f.expr.eval(&env(tree, disc, n, k, j))),
        FieldSpec::Random(r) => {
            let f = generate_random_field(seed, r.amplitude, r.structure, tree, m, kind);
            match f.sup_norm() {
                s if r.normalize && s > 0.0 => f.scaled(r.amplitude.abs() / s),
                _ => f,
            }
        }
    }
}

/// Slice at level N.
pub fn terminal_slice(spec: &FieldSpec, seed: u64, tree: &ScenarioTree, disc: &Discretization) -> LevelSlice {
    let (m, n) = (disc.m(), tree.levels());
    match spec {
        FieldSpec::Zero => LevelSlice::zeros(tree, n, m),
        FieldSpec::Constant(c) => LevelSlice::from_fn(tree, n, m, |_, _| *c),
        FieldSpec::Formula(f) => LevelSlice::from_fn(tree, n, m, |k, j| f.expr.eval(&env(tree, disc, n, k, j))),
        FieldSpec::Random(r) => {
            let s = generate_random_terminal(seed, r.amplitude, r.structure, tree, m);
            match s.sup_norm() {
                v if r.normalize && v > 0.0 => s.scaled(r.amplitude.abs() / v),
                _ => s,
            }
        }
    }
}

pub struct Instance {
    pub tree: ScenarioTree,
    pub disc: Discretization,
    pub coeffs: CoefficientSet,
    pub data: ProblemData,
}

impl Instance {
    /// Materializes the config with `seed` driving every random field.
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Self::with_tree(cfg, seed, build_tree(&cfg.tree)?)
    }

    pub fn with_tree(cfg: &ExperimentConfig, seed: u64, tree: ScenarioTree) -> Result<Self> {
        let disc = build_grid(&cfg.grid)?;
        let alpha = adapted_field(&cfg.alpha, seed, FieldKind::Alpha, &tree, &disc);
        let beta = adapted_field(&cfg.beta, seed, FieldKind::Beta, &tree, &disc);
        let coeffs = CoefficientSet::new(&tree, &disc, alpha, beta)?;
        let terminal = terminal_slice(&cfg.terminal, seed, &tree, &disc);
        let source = adapted_field(&cfg.source, seed, FieldKind::Source, &tree, &disc);
        let data = ProblemData::new(&tree, &disc, terminal, source)?;
        Ok(Self { tree, disc, coeffs, data })
    }
}
