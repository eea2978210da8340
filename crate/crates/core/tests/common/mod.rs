#![allow(dead_code)]

use bspde_lab::control::solve_forward;
use bspde_lab::{solve_linear, AdaptedField, CoefficientSet, Discretization, LevelSlice, ProblemData, ScenarioTree};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn field(rng: &mut ChaCha8Rng, tree: &ScenarioTree, m: usize, amp: f64) -> AdaptedField {
    AdaptedField::from_fn(tree, m, tree.levels(), |_, _, _| rng.random_range(-amp..=amp))
}

/// Same value at every node of a level.
pub fn deterministic_field(rng: &mut ChaCha8Rng, tree: &ScenarioTree, m: usize, amp: f64) -> AdaptedField {
    let table: Vec<Vec<f64>> = (0..tree.levels()).map(|_| (0..m).map(|_| rng.random_range(-amp..=amp)).collect()).collect();
    AdaptedField::from_fn(tree, m, tree.levels(), |n, _, j| table[n][j])
}

pub fn terminal(rng: &mut ChaCha8Rng, tree: &ScenarioTree, m: usize, amp: f64) -> LevelSlice {
    LevelSlice::from_fn(tree, tree.levels(), m, |_, _| rng.random_range(-amp..=amp))
}

pub struct Random {
    pub tree: ScenarioTree,
    pub disc: Discretization,
    pub coeffs: CoefficientSet,
    pub data: ProblemData,
}

/// Coefficients bounded by `alpha` and `beta`, data bounded by `amp`.
pub fn random_instance(seed: u64, levels: usize, recombining: bool, m: usize, alpha: f64, beta: f64, amp: f64) -> Random {
    let mut r = rng(seed);
    let tree = ScenarioTree::build(levels, 1.0, recombining).unwrap();
    let disc = Discretization::new(m, 1.0).unwrap();
    let coeffs = CoefficientSet::new(&tree, &disc, field(&mut r, &tree, m, alpha), field(&mut r, &tree, m, beta)).unwrap();
    let yt = terminal(&mut r, &tree, m, amp);
    let f = field(&mut r, &tree, m, amp);
    let data = ProblemData::new(&tree, &disc, yt, f).unwrap();
    Random { tree, disc, coeffs, data }
}

/// Least-norm null control from the adjoint side: row i of the constraint map
/// is read off the adjoint started at e_i / h, and the weighted normal
/// equations are solved by Cholesky. Full trees only.
pub fn adjoint_oracle(tree: &ScenarioTree, disc: &Discretization, alpha: &AdaptedField, yt: &LevelSlice) -> AdaptedField {
    let (m, h, dt, big_n) = (disc.m(), disc.h(), tree.dt(), tree.levels());
    let mut vars = Vec::new();
    for n in 0..big_n {
        for k in 0..tree.node_count(n) {
            for j in 0..m {
                if disc.mask()[j] {
                    vars.push((n, k, j));
                }
            }
        }
    }
    let weight = |n: usize, k: usize| dt * tree.probability(n, k) * h;
    let mut a = DMatrix::zeros(m, vars.len());
    let mut c = DVector::zeros(m);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0 / h;
        let q = solve_forward(tree, disc, alpha, &e).unwrap();
        for (col, &(n, k, j)) in vars.iter().enumerate() {
            a[(i, col)] = weight(n, k) * q.level(n).node(k)[j];
        }
        let mut pairing = 0.0;
        for k in 0..tree.node_count(big_n) {
            let qn = q.level(big_n - 1).node(k / 2);
            pairing += tree.probability(big_n, k) * h * yt.node(k).iter().zip(qn).map(|(u, v)| u * v).sum::<f64>();
        }
        c[i] = pairing;
    }
    let winv = DVector::from_iterator(vars.len(), vars.iter().map(|&(n, k, _)| 1.0 / weight(n, k)));
    let aw = DMatrix::from_fn(m, vars.len(), |r, col| a[(r, col)] * winv[col]);
    let gram = &aw * a.transpose();
    let chol = gram.cholesky().expect("constraint map has full row rank");
    let mut lambda = chol.solve(&(-&c));
    // The Gram system squares the conditioning; refine on the constraint residual.
    for _ in 0..4 {
        let residual = &a * (aw.transpose() * &lambda) + &c;
        lambda -= chol.solve(&residual);
    }
    let coef = aw.transpose() * lambda;
    let mut out = AdaptedField::zeros(tree, m, big_n);
    for (col, &(n, k, j)) in vars.iter().enumerate() {
        out.level_mut(n).node_mut(k)[j] = coef[col];
    }
    out
}

pub fn masked_source(disc: &Discretization, h: &AdaptedField) -> AdaptedField {
    let mask = disc.mask().to_vec();
    let m = disc.m();
    AdaptedField::from_slices(
        m,
        h.slices()
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for (i, v) in s.values_mut().iter_mut().enumerate() {
                    if !mask[i % m] {
                        *v = 0.0;
                    }
                }
                s
            })
            .collect(),
    )
    .unwrap()
}

pub fn initial_state(tree: &ScenarioTree, disc: &Discretization, alpha: &AdaptedField, yt: &LevelSlice, h: &AdaptedField) -> Vec<f64> {
    let coeffs = CoefficientSet::new(tree, disc, alpha.clone(), AdaptedField::zeros(tree, disc.m(), tree.levels())).unwrap();
    let data = ProblemData::new(tree, disc, yt.clone(), masked_source(disc, h)).unwrap();
    solve_linear(tree, disc, &coeffs, &data).unwrap().y.level(0).node(0).to_vec()
}
