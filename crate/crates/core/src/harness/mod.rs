//! Config-driven experiment runs. A run writes config.json (the effective
//! config), summary.json (reports and verdict, sorted keys) and CSV tables
//! into its own directory, and is a pure function of the config.

pub mod config;
pub mod data;
pub mod experiments;
pub mod expr;
pub mod output;
pub mod random;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};

pub use config::{ExperimentConfig, Kind};
pub use output::{Check, Table};
pub use random::{generate_random_field, generate_random_terminal, FieldKind, Structure};

use crate::error::{Error, Result};
use experiments::CaseOutput;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub summary: Value,
}

fn run_case(kind: Kind, cfg: &ExperimentConfig) -> Result<CaseOutput> {
    match kind {
        Kind::Solve => experiments::solve(cfg),
        Kind::ItoCheck => experiments::ito_check(cfg),
        Kind::Convergence => experiments::convergence(cfg),
        Kind::Estimates => experiments::estimates(cfg),
        Kind::Control => experiments::control(cfg),
        Kind::Semilinear => experiments::semilinear(cfg),
        Kind::ToolkitProps => experiments::toolkit(cfg),
    }
}

/// Runs every case and writes the artifacts into `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let kind = config.kind.ok_or_else(|| Error::Config("experiment kind missing".into()))?;
    std::fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_path_buf(), source })?;
    output::write_text(&out.join("config.json"), &config.to_json())?;

    let mut checks = Vec::new();
    let mut cases = Vec::new();
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    for (name, cfg) in config.resolve() {
        let result = run_case(kind, &cfg).map_err(|e| match name.as_str() {
            "" => e,
            _ => Error::Config(format!("case {name}: {e}")),
        })?;
        for mut c in result.checks {
            c.case = name.clone();
            checks.push(c);
        }
        for t in result.tables {
            let tagged = t.tagged(&name, cfg.seed);
            match tables.get_mut(&t.name) {
                Some(acc) => acc.rows.extend(tagged.rows),
                None => {
                    tables.insert(t.name.clone(), tagged);
                }
            }
        }
        cases.push(json!({ "name": name, "seed": cfg.seed, "report": result.report }));
    }

    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    let summary = json!({
        "kind": kind.name(),
        "name": config.name,
        "seed": config.seed,
        "passed": passed,
        "checks": output::to_value(&checks),
        "cases": cases,
        "tables": tables.keys().map(|k| format!("{k}.csv")).collect::<Vec<_>>(),
    });
    for t in tables.values() {
        t.write(out)?;
    }
    output::write_text(&out.join("summary.json"), &output::canonical_json(&summary))?;
    Ok(RunOutcome { passed, checks, summary })
}

/// One line per check, for terminals and logs.
pub fn format_checks(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let case = if c.case.is_empty() { String::new() } else { format!("[{}] ", c.case) };
        let detail = match (c.value, c.threshold) {
            (Some(v), Some(t)) => {
                let rel = serde_json::to_value(c.relation).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                format!(": {v:e} {rel} {t:e}")
            }
            _ => String::new(),
        };
        s.push_str(&format!("{status} {case}{}{detail}\n", c.name));
    }
    s
}
