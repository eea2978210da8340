//! Seeded random data. Values are drawn in a fixed (level, node, point)
//! order from ChaCha8, so a field is a pure function of its seed.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{AdaptedField, LevelSlice};
use crate::tree::ScenarioTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Alpha,
    Beta,
    Terminal,
    Source,
}

impl FieldKind {
    fn salt(self) -> u64 {
        match self {
            FieldKind::Alpha => 0x61_6c_70_68,
            FieldKind::Beta => 0x62_65_74_61,
            FieldKind::Terminal => 0x74_65_72_6d,
            FieldKind::Source => 0x73_72_63_65,
        }
    }
}

/// How much of the index a random field depends on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Independent value per level, node and grid point.
    #[default]
    Full,
    /// One profile in space shared by every node.
    Spatial,
    /// A single number.
    Constant,
}

fn rng_for(seed: u64, kind: FieldKind) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ kind.salt().rotate_left(32))
}

fn draw(rng: &mut ChaCha8Rng, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    rng.random_range(-amplitude..=amplitude).clamp(-amplitude, amplitude)
}

/// Levels `first..first + count` with values uniform in [-amplitude, amplitude].
fn generate(
    seed: u64,
    amplitude: f64,
    structure: Structure,
    tree: &ScenarioTree,
    m: usize,
    kind: FieldKind,
    levels: std::ops::Range<usize>,
) -> Vec<LevelSlice> {
    let mut rng = rng_for(seed, kind);
    match structure {
        Structure::Constant => {
            let c = draw(&mut rng, amplitude);
            levels.map(|n| LevelSlice::from_fn(tree, n, m, |_, _| c)).collect()
        }
        Structure::Spatial => {
            let profile: Vec<f64> = (0..m).map(|_| draw(&mut rng, amplitude)).collect();
            levels.map(|n| LevelSlice::broadcast(tree, n, &profile)).collect()
        }
        Structure::Full => levels.map(|n| LevelSlice::from_fn(tree, n, m, |_, _| draw(&mut rng, amplitude))).collect(),
    }
}

/// Random adapted field on levels 0..N-1 (coefficients and sources).
pub fn generate_random_field(
    seed: u64,
    amplitude: f64,
    structure: Structure,
    tree: &ScenarioTree,
    m: usize,
    kind: FieldKind,
) -> AdaptedField {
    let slices = generate(seed, amplitude.abs(), structure, tree, m, kind, 0..tree.levels());
    AdaptedField::from_slices(m, slices).expect("levels generated in order")
}

/// Random terminal slice at level N.
pub fn generate_random_terminal(seed: u64, amplitude: f64, structure: Structure, tree: &ScenarioTree, m: usize) -> LevelSlice {
    let n = tree.levels();
    generate(seed, amplitude.abs(), structure, tree, m, FieldKind::Terminal, n..n + 1).pop().expect("one level")
}
