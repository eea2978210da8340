//! Space-valued adapted processes on the tree: one grid vector per node.

use serde::Serialize;

use crate::error::{usage, Error, Result};
use crate::grid::sup_abs;
use crate::tree::ScenarioTree;

/// Grid vectors for every node of one level, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSlice {
    level: usize,
    m: usize,
    values: Vec<f64>,
}

impl LevelSlice {
    pub fn zeros(tree: &ScenarioTree, level: usize, m: usize) -> Self {
        Self { level, m, values: vec![0.0; tree.node_count(level) * m] }
    }

    pub fn from_fn(tree: &ScenarioTree, level: usize, m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(tree.node_count(level) * m);
        for k in 0..tree.node_count(level) {
            for j in 0..m {
                values.push(f(k, j));
            }
        }
        Self { level, m, values }
    }

    pub fn from_values(tree: &ScenarioTree, level: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        let want = tree.node_count(level) * m;
        if values.len() != want {
            return Err(usage(format!("level {level} slice needs {want} values, got {}", values.len())));
        }
        Ok(Self { level, m, values })
    }

    /// The same grid vector at every node.
    pub fn broadcast(tree: &ScenarioTree, level: usize, v: &[f64]) -> Self {
        Self::from_fn(tree, level, v.len(), |_, j| v[j])
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.m..(k + 1) * self.m]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.m..(k + 1) * self.m]
    }

    pub fn sup_norm(&self) -> f64 {
        sup_abs(&self.values)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { level: self.level, m: self.m, values: self.values.iter().map(|v| lambda * v).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check(&self, tree: &ScenarioTree, level: usize, m: usize, what: &str) -> Result<()> {
        if self.level != level || self.m != m || self.values.len() != tree.node_count(level) * m {
            return Err(usage(format!(
                "{what}: expected level {level} with {} nodes x {m} points, got level {} with {} values of width {}",
                tree.node_count(level),
                self.level,
                self.values.len(),
                self.m
            )));
        }
        if !self.all_finite() {
            return Err(Error::Data(format!("{what} contains non-finite values at level {level}")));
        }
        Ok(())
    }
}

/// Adapted process over levels `0..len()`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptedField {
    m: usize,
    slices: Vec<LevelSlice>,
}

impl AdaptedField {
    pub fn zeros(tree: &ScenarioTree, m: usize, levels: usize) -> Self {
        Self { m, slices: (0..levels).map(|n| LevelSlice::zeros(tree, n, m)).collect() }
    }

    pub fn from_fn(
        tree: &ScenarioTree,
        m: usize,
        levels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let slices = (0..levels).map(|n| LevelSlice::from_fn(tree, n, m, |k, j| f(n, k, j))).collect();
        Self { m, slices }
    }

    pub fn from_slices(m: usize, slices: Vec<LevelSlice>) -> Result<Self> {
        for (n, s) in slices.iter().enumerate() {
            if s.level != n || s.m != m {
                return Err(usage(format!("slice {n} has level {} and width {}", s.level, s.m)));
            }
        }
        Ok(Self { m, slices })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of stored levels.
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn level(&self, n: usize) -> &LevelSlice {
        &self.slices[n]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut LevelSlice {
        &mut self.slices[n]
    }

    pub fn slices(&self) -> &[LevelSlice] {
        &self.slices
    }

    pub fn into_slices(self) -> Vec<LevelSlice> {
        self.slices
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().fold(0.0f64, |m, s| m.max(s.sup_norm()))
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self { m: self.m, slices: self.slices.iter().map(|s| s.scaled(lambda)).collect() }
    }

    /// Pointwise map, keeping shape.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let slices = self
            .slices
            .iter()
            .map(|s| LevelSlice { level: s.level, m: s.m, values: s.values.iter().map(|&v| f(v)).collect() })
            .collect();
        Self { m: self.m, slices }
    }

    /// max |self - other| over all entries; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.slices.len(), other.slices.len(), "field depth mismatch");
        let mut worst: f64 = 0.0;
        for (a, b) in self.slices.iter().zip(&other.slices) {
            for (x, y) in a.values.iter().zip(&b.values) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }

    pub(crate) fn check(&self, tree: &ScenarioTree, m: usize, levels: usize, what: &str) -> Result<()> {
        if self.m != m || self.slices.len() != levels {
            return Err(usage(format!(
                "{what}: expected {levels} levels of width {m}, got {} levels of width {}",
                self.slices.len(),
                self.m
            )));
        }
        for (n, s) in self.slices.iter().enumerate() {
            s.check(tree, n, m, what)?;
        }
        Ok(())
    }
}
