//! Exhaustive binomial scenario space.
//!
//! Every expectation is a finite sum over tree nodes, so martingale and
//! duality identities can be checked to machine precision. Node `k` at level
//! `n` has children `(up, down)`; on a recombining tree these are `(k, k + 1)`
//! and `k` counts down-moves, on a full tree they are `(2k, 2k + 1)` and the
//! bits of `k` spell the path (most significant bit first, 1 = down).

use crate::error::{usage, Error, Result};

/// Default cap on the depth of a full (non-recombining) tree.
pub const DEFAULT_FULL_TREE_CAP: usize = 16;

/// Binomial coefficients must fit in a `u64` numerator.
pub const RECOMBINING_CAP: usize = 62;

/// Upper bound on the number of paths visited by path enumeration.
pub const PATH_ENUMERATION_CAP: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    levels: usize,
    horizon: f64,
    dt: f64,
    sqrt_dt: f64,
    recombining: bool,
}

impl ScenarioTree {
    pub fn build(levels: usize, horizon: f64, recombining: bool) -> Result<Self> {
        Self::build_with_cap(levels, horizon, recombining, DEFAULT_FULL_TREE_CAP)
    }

    pub fn build_with_cap(
        levels: usize,
        horizon: f64,
        recombining: bool,
        full_cap: usize,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(usage("tree needs at least one level"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(usage(format!("horizon must be positive, got {horizon}")));
        }
        if recombining && levels > RECOMBINING_CAP {
            return Err(Error::Resource(format!(
                "recombining tree depth {levels} exceeds the cap of {RECOMBINING_CAP} levels"
            )));
        }
        if !recombining && levels > full_cap {
            return Err(Error::Resource(format!(
                "full tree depth {levels} exceeds the cap of {full_cap} levels (2^{levels} leaves)"
            )));
        }
        let dt = horizon / levels as f64;
        Ok(Self { levels, horizon, dt, sqrt_dt: dt.sqrt(), recombining })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn is_recombining(&self) -> bool {
        self.recombining
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn node_count(&self, level: usize) -> usize {
        if self.recombining {
            level + 1
        } else {
            1 << level
        }
    }

    /// Children `(up, down)` at `level + 1`.
    pub fn children(&self, level: usize, node: usize) -> (usize, usize) {
        debug_assert!(level < self.levels && node < self.node_count(level));
        if self.recombining {
            (node, node + 1)
        } else {
            (2 * node, 2 * node + 1)
        }
    }

    pub fn down_moves(&self, node: usize) -> usize {
        if self.recombining {
            node
        } else {
            node.count_ones() as usize
        }
    }

    /// W at a node: sqrt(dt) times the signed count of increments.
    pub fn brownian(&self, level: usize, node: usize) -> f64 {
        let signed = level as i64 - 2 * self.down_moves(node) as i64;
        signed as f64 * self.sqrt_dt
    }

    /// Probability numerator over `2^level`.
    pub fn probability_numerator(&self, level: usize, node: usize) -> u64 {
        if self.recombining {
            binomial(level as u64, node as u64)
        } else {
            1
        }
    }

    pub fn probability(&self, level: usize, node: usize) -> f64 {
        self.probability_numerator(level, node) as f64 / (level as f64).exp2()
    }

    pub fn probabilities(&self, level: usize) -> Vec<f64> {
        (0..self.node_count(level)).map(|k| self.probability(level, k)).collect()
    }

    /// E[x] as a sum in ascending node order.
    pub fn expectation(&self, x: &AdaptedRv) -> f64 {
        let mut acc = 0.0;
        for (k, v) in x.values.iter().enumerate() {
            acc += self.probability(x.level, k) * v;
        }
        acc
    }

    /// Node visited at `level` by path `path` (bits most significant first, 1 = down).
    pub fn path_node(&self, path: usize, level: usize) -> usize {
        let prefix = path >> (self.levels - level);
        if self.recombining {
            prefix.count_ones() as usize
        } else {
            prefix
        }
    }

    /// Number of distinct paths, checked against [`PATH_ENUMERATION_CAP`].
    pub fn path_count(&self) -> Result<usize> {
        if self.levels >= usize::BITS as usize || (1usize << self.levels) > PATH_ENUMERATION_CAP {
            return Err(Error::Resource(format!(
                "path functional over 2^{} paths exceeds the enumeration cap of {PATH_ENUMERATION_CAP}",
                self.levels
            )));
        }
        Ok(1 << self.levels)
    }

    /// Brownian values at one level.
    pub fn brownian_rv(&self, level: usize) -> AdaptedRv {
        AdaptedRv::new(level, (0..self.node_count(level)).map(|k| self.brownian(level, k)).collect())
    }

    fn check_rv(&self, x: &AdaptedRv) -> Result<()> {
        if x.level > self.levels {
            return Err(usage(format!("level {} beyond tree depth {}", x.level, self.levels)));
        }
        if x.values.len() != self.node_count(x.level) {
            return Err(usage(format!(
                "level {} expects {} node values, got {}",
                x.level,
                self.node_count(x.level),
                x.values.len()
            )));
        }
        Ok(())
    }

    /// E[x | F_target] for x living at a deeper level.
    pub fn condexp(&self, x: &AdaptedRv, target: usize) -> Result<AdaptedRv> {
        self.check_rv(x)?;
        if target > x.level {
            return Err(usage(format!(
                "conditional expectation target level {target} is after the variable's level {}",
                x.level
            )));
        }
        let mut values = x.values.clone();
        for level in (target..x.level).rev() {
            values = (0..self.node_count(level))
                .map(|k| {
                    let (u, d) = self.children(level, k);
                    0.5 * (values[u] + values[d])
                })
                .collect();
        }
        Ok(AdaptedRv::new(target, values))
    }

    /// Partial sums S_0 = 0, S_{n+1} = S_n + Z_n (W_{n+1} - W_n).
    ///
    /// On a recombining tree the sum is generally path dependent; it is
    /// accepted only when both parents of every node agree.
    pub fn ito_partial_sums(&self, integrand: &[AdaptedRv]) -> Result<Vec<AdaptedRv>> {
        if integrand.len() != self.levels {
            return Err(usage(format!(
                "integrand needs {} levels, got {}",
                self.levels,
                integrand.len()
            )));
        }
        for (n, z) in integrand.iter().enumerate() {
            if z.level != n {
                return Err(usage(format!("integrand entry {n} lives at level {}", z.level)));
            }
            self.check_rv(z)?;
        }
        let mut sums = vec![AdaptedRv::new(0, vec![0.0])];
        for n in 0..self.levels {
            let prev = &sums[n];
            let mut next = vec![f64::NAN; self.node_count(n + 1)];
            for k in 0..self.node_count(n) {
                let w = self.brownian(n, k);
                let (u, d) = self.children(n, k);
                for child in [u, d] {
                    let v = prev.values[k] + integrand[n].values[k] * (self.brownian(n + 1, child) - w);
                    if next[child].is_nan() {
                        next[child] = v;
                    } else if (next[child] - v).abs() > 1e-12 * (1.0 + v.abs()) {
                        return Err(usage(
                            "stochastic integral is path dependent on a recombining tree; use a full tree",
                        ));
                    }
                }
            }
            sums.push(AdaptedRv::new(n + 1, next));
        }
        Ok(sums)
    }

    /// Discrete Itô integral at the terminal level.
    pub fn ito_integral(&self, integrand: &[AdaptedRv]) -> Result<AdaptedRv> {
        Ok(self.ito_partial_sums(integrand)?.pop().expect("at least one level"))
    }

    /// max over levels and nodes of |E[X_{n+1} | F_n] - X_n|.
    pub fn check_martingale(&self, process: &[AdaptedRv]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for pair in process.windows(2) {
            let (cur, next) = (&pair[0], &pair[1]);
            if next.level != cur.level + 1 {
                return Err(usage("process must live on consecutive levels"));
            }
            let projected = self.condexp(next, cur.level)?;
            self.check_rv(cur)?;
            for (a, b) in projected.values.iter().zip(&cur.values) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }

    /// E[sum_n g_n] for an additive functional whose step term depends on the
    /// node at level n and the child taken. Returns the conditional
    /// expectation at every node of `from_level`.
    pub fn additive_condexp<F>(&self, from_level: usize, mut step: F) -> AdaptedRv
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut acc = vec![0.0; self.node_count(self.levels)];
        for n in (from_level..self.levels).rev() {
            acc = (0..self.node_count(n))
                .map(|k| {
                    let (u, d) = self.children(n, k);
                    0.5 * (step(n, k, u) + acc[u]) + 0.5 * (step(n, k, d) + acc[d])
                })
                .collect();
        }
        AdaptedRv::new(from_level, acc)
    }
}

/// Real random variable measurable at one level.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedRv {
    pub level: usize,
    pub values: Vec<f64>,
}

impl AdaptedRv {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        Self { level, values }
    }

    pub fn constant(tree: &ScenarioTree, level: usize, c: f64) -> Self {
        Self::new(level, vec![c; tree.node_count(level)])
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = (acc as u128 * (n - i) as u128 / (i + 1) as u128) as u64;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_flip() {
        let t = ScenarioTree::build(1, 1.0, true).unwrap();
        assert_eq!(t.probabilities(1), vec![0.5, 0.5]);
        assert_eq!(t.brownian(1, 0), 1.0);
        assert_eq!(t.brownian(1, 1), -1.0);
    }

    #[test]
    fn binomial_weights() {
        let t = ScenarioTree::build(2, 1.0, true).unwrap();
        assert_eq!(t.probabilities(2), vec![0.25, 0.5, 0.25]);
        assert_eq!(binomial(62, 31), 465428353255261088);
        assert_eq!(binomial(10, 3), 120);
    }

    #[test]
    fn full_tree_leaves() {
        let t = ScenarioTree::build(3, 0.75, false).unwrap();
        assert_eq!(t.node_count(3), 8);
        let mut w: Vec<f64> = (0..8).map(|k| t.brownian(3, k)).collect();
        w.sort_by(f64::total_cmp);
        assert_eq!(w, vec![-1.5, -0.5, -0.5, -0.5, 0.5, 0.5, 0.5, 1.5]);
        assert!(t.probabilities(3).iter().all(|&p| p == 0.125));
    }

    #[test]
    fn full_tree_cap() {
        let err = ScenarioTree::build(17, 1.0, false).unwrap_err();
        assert!(err.to_string().contains("cap of 16"), "{err}");
        assert!(ScenarioTree::build_with_cap(17, 1.0, false, 17).is_ok());
    }

    #[test]
    fn condexp_two_levels() {
        let t = ScenarioTree::build(2, 1.0, false).unwrap();
        let x = AdaptedRv::new(2, vec![4.0, 0.0, 2.0, -2.0]);
        assert_eq!(t.condexp(&x, 1).unwrap().values, vec![2.0, 0.0]);
        assert!(t.condexp(&AdaptedRv::new(1, vec![1.0, 1.0]), 2).is_err());
    }

    #[test]
    fn martingale_detects_drift() {
        let t = ScenarioTree::build(4, 1.0, true).unwrap();
        let drift: Vec<AdaptedRv> = (0..=4).map(|n| AdaptedRv::constant(&t, n, t.time(n))).collect();
        assert!((t.check_martingale(&drift).unwrap() - t.dt()).abs() < 1e-15);
        let w: Vec<AdaptedRv> = (0..=4).map(|n| t.brownian_rv(n)).collect();
        assert!(t.check_martingale(&w).unwrap() <= 1e-15);
    }

    #[test]
    fn ito_integral_two_steps() {
        let t = ScenarioTree::build(2, 1.0, false).unwrap();
        let z = vec![AdaptedRv::new(0, vec![0.0]), t.brownian_rv(1)];
        let i = t.ito_integral(&z).unwrap();
        assert!(t.expectation(&i).abs() < 1e-16);
        let second: f64 = i.values.iter().map(|v| v * v * 0.25).sum();
        assert!((second - t.dt() * t.dt()).abs() < 1e-15);
    }

    #[test]
    fn recombining_rejects_path_dependence() {
        let t = ScenarioTree::build(2, 1.0, true).unwrap();
        let z = vec![AdaptedRv::new(0, vec![1.0]), t.brownian_rv(1)];
        assert!(t.ito_integral(&z).is_err());
        let ones: Vec<AdaptedRv> = (0..2).map(|n| AdaptedRv::constant(&t, n, 1.0)).collect();
        let i = t.ito_integral(&ones).unwrap();
        for (k, v) in i.values.iter().enumerate() {
            assert!((v - t.brownian(2, k)).abs() < 1e-15);
        }
    }
}
