//! Experiment configuration. One JSON document per run; every field except
//! the experiment kind has a default, and the echoed config spells all of
//! them out.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use super::expr::{Expr, Var};
use super::random::Structure;
use crate::control::InitialMeasurability;
use crate::error::{Error, Result};
use crate::semilinear::InitialGuess;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Solve,
    ItoCheck,
    Estimates,
    Control,
    Semilinear,
    Convergence,
    ToolkitProps,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Solve,
        Kind::ItoCheck,
        Kind::Estimates,
        Kind::Control,
        Kind::Semilinear,
        Kind::Convergence,
        Kind::ToolkitProps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Solve => "solve",
            Kind::ItoCheck => "ito-check",
            Kind::Estimates => "estimates",
            Kind::Control => "control",
            Kind::Semilinear => "semilinear",
            Kind::Convergence => "convergence",
            Kind::ToolkitProps => "toolkit-props",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An exponent that may be "inf".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Exponent(v)),
            Raw::Str(s) if s == "inf" => Ok(Exponent(f64::INFINITY)),
            Raw::Str(s) => Err(de::Error::custom(format!("expected a number or \"inf\", got \"{s}\""))),
        }
    }
}

/// A formula checked at parse time.
#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    pub expr: Expr,
}

impl Serialize for Formula {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.expr.source())
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src, &[Var::X, Var::T, Var::W])
            .map(|expr| Formula { expr })
            .map_err(|e| de::Error::custom(format!("formula \"{src}\" {e}")))
    }
}

/// A formula in the single variable s.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFormula {
    pub expr: Expr,
}

impl Serialize for ScalarFormula {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.expr.source())
    }
}

impl<'de> Deserialize<'de> for ScalarFormula {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src, &[Var::S])
            .map(|expr| ScalarFormula { expr })
            .map_err(|e| de::Error::custom(format!("formula \"{src}\" {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    pub amplitude: f64,
    #[serde(default)]
    pub structure: Structure,
    /// Rescale so the sup norm equals the amplitude.
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSpec {
    #[default]
    Zero,
    Constant(f64),
    Formula(Formula),
    Random(RandomSpec),
}

impl FieldSpec {
    pub fn is_random(&self) -> bool {
        matches!(self, FieldSpec::Random(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub levels: usize,
    pub horizon: f64,
    pub recombining: bool,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self { levels: 8, horizon: 1.0, recombining: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub interior_points: usize,
    pub length: f64,
    pub control_interval: Option<[f64; 2]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { interior_points: 16, length: 1.0, control_interval: None }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedSpec {
    #[serde(default = "one_usize")]
    pub runs: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSettings {
    /// Replaces the configured data by y = (a + b W) sin(pi x / l) with
    /// random constants a, b, alpha, beta.
    pub manufactured: Option<ManufacturedSpec>,
    pub tol: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { manufactured: None, tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItoSettings {
    pub runs: usize,
    pub exponents: Vec<f64>,
    pub martingale_tol: f64,
}

impl Default for ItoSettings {
    fn default() -> Self {
        Self { runs: 1, exponents: vec![2.0, 4.0], martingale_tol: 1e-11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub levels: Vec<usize>,
    pub exponents: Vec<f64>,
    pub min_order: f64,
    pub energy_tol: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self { levels: vec![8, 16, 32], exponents: vec![2.0, 3.0, 4.0], min_order: 0.9, energy_tol: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateCheck {
    Linf,
    Homogeneity,
    Energy,
    Lp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatesSettings {
    pub runs: usize,
    pub checks: Vec<EstimateCheck>,
    pub exponents: Vec<f64>,
    pub scalings: Vec<f64>,
    pub homogeneity_tol: f64,
    pub p2_tol: f64,
    /// Largest admissible implied constants; absent means "finite".
    pub baseline_energy: Option<f64>,
    pub baseline_lp: Option<f64>,
}

impl Default for EstimatesSettings {
    fn default() -> Self {
        Self {
            runs: 1,
            checks: vec![EstimateCheck::Linf, EstimateCheck::Homogeneity, EstimateCheck::Energy, EstimateCheck::Lp],
            exponents: vec![4.0],
            scalings: vec![0.1, 10.0],
            homogeneity_tol: 1e-9,
            p2_tol: 1e-10,
            baseline_energy: None,
            baseline_lp: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Synthesize,
    Ladder,
    Blowup,
    Observability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSettings {
    pub mode: ControlMode,
    pub p: Exponent,
    pub measurability: InitialMeasurability,
    pub y0_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub step_tol: f64,
    /// Compare with a dense pseudoinverse solve (small instances only).
    pub oracle: bool,
    pub oracle_h_tol: f64,
    pub oracle_y0_tol: f64,
    pub verify_trials: usize,
    pub exponents: Vec<f64>,
    pub horizons: Vec<f64>,
    pub pprime: f64,
    pub trials: usize,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            mode: ControlMode::Synthesize,
            p: Exponent(2.0),
            measurability: InitialMeasurability::Deterministic,
            y0_tol: 1e-8,
            gap_tol: 1e-10,
            max_iter: crate::control::DEFAULT_MAX_ITER,
            step_tol: crate::control::DEFAULT_STEP_TOL,
            oracle: false,
            oracle_h_tol: 1e-8,
            oracle_y0_tol: 1e-10,
            verify_trials: 8,
            exponents: vec![2.0, 8.0, 64.0],
            horizons: vec![0.25, 0.5, 1.0],
            pprime: 2.0,
            trials: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearityConfig {
    /// Coefficients of s^0, s^1, ...; derivatives are exact.
    Polynomial(Vec<f64>),
    /// Black box in s; derivatives by central differences.
    Formula(ScalarFormula),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemilinearSettings {
    pub nonlinearity: NonlinearityConfig,
    pub interval: [f64; 2],
    /// Rescales the terminal data to this sup norm.
    pub amplitude: Option<f64>,
    pub initial: InitialGuess,
    pub tol: f64,
    pub max_iter: usize,
    pub max_ratio: f64,
    pub two_start: bool,
    pub uniqueness_factor: f64,
    pub ladder: Vec<f64>,
}

impl Default for SemilinearSettings {
    fn default() -> Self {
        Self {
            nonlinearity: NonlinearityConfig::Polynomial(vec![0.0, 0.0, 0.0, 1.0]),
            interval: [-2.0, 2.0],
            amplitude: None,
            initial: InitialGuess::Zero,
            tol: 1e-10,
            max_iter: 200,
            max_ratio: 0.5,
            two_start: true,
            uniqueness_factor: 10.0,
            ladder: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolkitCheck {
    Truncation,
    Gronwall,
    Extrapolation,
    Taylor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitSettings {
    pub checks: Vec<ToolkitCheck>,
    pub samples: usize,
    pub match_tol: f64,
    pub gronwall_points: usize,
    pub gronwall_tol: f64,
    pub extrapolation_tol: f64,
    pub taylor_tol: f64,
}

impl Default for ToolkitSettings {
    fn default() -> Self {
        Self {
            checks: vec![ToolkitCheck::Truncation, ToolkitCheck::Gronwall, ToolkitCheck::Extrapolation, ToolkitCheck::Taylor],
            samples: 10_000,
            match_tol: 1e-10,
            gronwall_points: 200,
            gronwall_tol: 1e-6,
            extrapolation_tol: 0.011,
            taylor_tol: 1e-8,
        }
    }
}

/// Overrides applied to the base config, section by section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub seed: Option<u64>,
    pub tree: Option<TreeSpec>,
    pub grid: Option<GridSpec>,
    pub alpha: Option<FieldSpec>,
    pub beta: Option<FieldSpec>,
    pub terminal: Option<FieldSpec>,
    pub source: Option<FieldSpec>,
    pub solve: Option<SolveSettings>,
    pub ito: Option<ItoSettings>,
    pub convergence: Option<ConvergenceSettings>,
    pub estimates: Option<EstimatesSettings>,
    pub control: Option<ControlSettings>,
    pub semilinear: Option<SemilinearSettings>,
    pub toolkit: Option<ToolkitSettings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tree: TreeSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub alpha: FieldSpec,
    #[serde(default)]
    pub beta: FieldSpec,
    #[serde(default)]
    pub terminal: FieldSpec,
    #[serde(default)]
    pub source: FieldSpec,
    #[serde(default)]
    pub solve: SolveSettings,
    #[serde(default)]
    pub ito: ItoSettings,
    #[serde(default)]
    pub convergence: ConvergenceSettings,
    #[serde(default)]
    pub estimates: EstimatesSettings,
    #[serde(default)]
    pub control: ControlSettings,
    #[serde(default)]
    pub semilinear: SemilinearSettings,
    #[serde(default)]
    pub toolkit: ToolkitSettings,
    #[serde(default)]
    pub cases: Vec<CaseSpec>,
}

impl ExperimentConfig {
    /// A config of the given kind with every default in place.
    pub fn new(kind: Kind) -> Self {
        Self {
            kind: Some(kind),
            name: String::new(),
            description: String::new(),
            seed: 0,
            tree: TreeSpec::default(),
            grid: GridSpec::default(),
            alpha: FieldSpec::Zero,
            beta: FieldSpec::Zero,
            terminal: FieldSpec::Zero,
            source: FieldSpec::Zero,
            solve: SolveSettings::default(),
            ito: ItoSettings::default(),
            convergence: ConvergenceSettings::default(),
            estimates: EstimatesSettings::default(),
            control: ControlSettings::default(),
            semilinear: SemilinearSettings::default(),
            toolkit: ToolkitSettings::default(),
            cases: Vec::new(),
        }
    }

    /// Parses JSON text; errors name the line, column and field path.
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let parsed: std::result::Result<Self, _> = serde_path_to_error::deserialize(&mut de);
        let cfg = parsed.map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!("{origin}:{}:{}: {path}: {inner}", inner.line(), inner.column()))
        })?;
        de.end().map_err(|e| Error::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// The base config when there are no cases, otherwise one config per case.
    pub fn resolve(&self) -> Vec<(String, ExperimentConfig)> {
        let mut base = self.clone();
        base.cases.clear();
        if self.cases.is_empty() {
            return vec![(String::new(), base)];
        }
        self.cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut cfg = base.clone();
                macro_rules! take {
                    ($($f:ident),*) => { $( if let Some(v) = &c.$f { cfg.$f = v.clone(); } )* };
                }
                take!(seed, tree, grid, alpha, beta, terminal, source, solve, ito, convergence, estimates, control, semilinear, toolkit);
                let name = if c.name.is_empty() { format!("case{i}") } else { c.name.clone() };
                (name, cfg)
            })
            .collect()
    }
}
