use std::fs;
use std::path::Path;

use bspde_lab::harness::{self, generate_random_field, ExperimentConfig, FieldKind, Kind, Structure};
use bspde_lab::ScenarioTree;
use serde_json::Value;

fn run(text: &str, dir: &Path) -> harness::RunOutcome {
    let cfg = ExperimentConfig::from_json(text, "inline").unwrap();
    harness::run(&cfg, dir).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn random_fields_are_seeded_and_clamped() {
    let tree = ScenarioTree::build(10, 1.0, false).unwrap();
    let zero = generate_random_field(3, 0.0, Structure::Full, &tree, 4, FieldKind::Source);
    assert_eq!(zero.sup_norm(), 0.0);
    let a = generate_random_field(3, 1.0, Structure::Full, &tree, 100, FieldKind::Source);
    let b = generate_random_field(3, 1.0, Structure::Full, &tree, 100, FieldKind::Source);
    assert_eq!(a, b);
    let count: usize = a.slices().iter().map(|s| s.values().len()).sum();
    assert!(count >= 100_000);
    assert!(a.slices().iter().flat_map(|s| s.values()).all(|v| v.abs() <= 1.0));
    assert_ne!(a, generate_random_field(4, 1.0, Structure::Full, &tree, 100, FieldKind::Source));
}

#[test]
fn zero_data_solve_reports_zero_norms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(r#"{"kind": "solve"}"#, dir.path());
    assert!(out.passed);
    let report = &out.summary["cases"][0]["report"];
    for key in ["y_sup", "z_sup", "y0_l2", "terminal_sup", "source_sup", "max_solve_residual"] {
        assert_eq!(report[key], Value::from(0.0), "{key}");
    }
}

#[test]
fn quartic_convergence_table_has_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        r#"{
          "kind": "convergence",
          "tree": {"recombining": true},
          "grid": {"interior_points": 16, "length": 8.0},
          "alpha": {"formula": "0.3*cos(pi*x/8)"},
          "beta": {"formula": "0.3*sin(pi*x/8)*exp(-t)"},
          "terminal": {"formula": "(1 + 0.3*W)*sin(pi*x/8)"},
          "source": {"formula": "0.5*cos(W)*sin(pi*x/8)"},
          "convergence": {"levels": [8, 16, 32], "exponents": [4]}
        }"#,
        dir.path(),
    );
    assert!(out.passed, "{}", harness::format_checks(&out.checks));
    let csv = fs::read_to_string(dir.path().join("ito_residual.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn tiny_control_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        r#"{
          "kind": "control",
          "tree": {"levels": 2, "recombining": false},
          "grid": {"interior_points": 3, "control_interval": [0.2, 0.6]},
          "terminal": {"formula": "sin(pi*x)"},
          "control": {"oracle": true}
        }"#,
        dir.path(),
    );
    assert!(out.passed, "{}", harness::format_checks(&out.checks));
}

#[test]
fn runs_are_byte_reproducible_and_tag_every_row_with_the_seed() {
    let text = r#"{
      "kind": "estimates",
      "seed": 41,
      "tree": {"levels": 6, "recombining": false},
      "grid": {"interior_points": 10},
      "alpha": {"random": {"amplitude": 1.0, "normalize": true}},
      "beta": {"random": {"amplitude": 1.0, "normalize": true}},
      "terminal": {"random": {"amplitude": 1.0}},
      "source": {"random": {"amplitude": 1.0}},
      "estimates": {"runs": 3}
    }"#;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(text, a.path());
    run(text, b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa, fb);
    for (name, bytes) in &fa {
        if name.ends_with(".csv") {
            let text = String::from_utf8(bytes.clone()).unwrap();
            assert!(!text.contains('\r'));
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("case,seed,"));
            assert!(lines.all(|l| l.split(',').nth(1).is_some_and(|s| s.parse::<u64>().is_ok())), "{name}");
        }
    }
}

#[test]
fn every_kind_has_a_default_config_that_round_trips() {
    for kind in Kind::ALL {
        let cfg = ExperimentConfig::new(kind);
        let again = ExperimentConfig::from_json(&cfg.to_json(), "echo").unwrap();
        assert_eq!(again.to_json(), cfg.to_json());
    }
}

#[test]
fn config_errors_point_at_the_offending_field() {
    let err = ExperimentConfig::from_json("{\n  \"kind\": \"solve\",\n  \"alpha\": {\"formula\": \"sin(\"}\n}", "bad.json").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.json:3:"), "{msg}");
    assert!(msg.contains("alpha"), "{msg}");
    let err = ExperimentConfig::from_json(r#"{"kind": "solve", "tre": {}}"#, "typo.json").unwrap_err();
    assert!(err.to_string().contains("tre"));
}

#[test]
fn catalog_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut count = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let cfg = ExperimentConfig::load(&p).unwrap();
            assert!(cfg.kind.is_some(), "{}", p.display());
            count += 1;
        }
    }
    assert_eq!(count, 12);
}
