use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bspde-lab")).args(args).output().unwrap()
}

fn catalog(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(name).to_string_lossy().into_owned()
}

#[test]
fn passing_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = bin(&["toolkit-props", "--config", &catalog("c11-toolkit.json"), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).ends_with("verdict: pass\n"));
    assert!(out.join("config.json").is_file());
    assert!(out.join("summary.json").is_file());
    assert!(fs::read_dir(&out).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "csv")));
}

#[test]
fn failing_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.json");
    fs::write(
        &cfg,
        r#"{"kind": "estimates", "tree": {"levels": 4, "recombining": false}, "grid": {"interior_points": 8},
            "terminal": {"formula": "sin(pi*x)"},
            "estimates": {"runs": 1, "checks": ["energy"], "baseline_energy": 1e-12}}"#,
    )
    .unwrap();
    let res = bin(&["estimates", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("verdict: fail"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let res = bin(&["solve", "--config", &catalog("c07-control-l2.json"), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("subcommand"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"kind\": \"solve\", \"alpha\": {\"formula\": \"x +\"}}").unwrap();
    let res = bin(&["solve", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("bad.json"));
}

#[test]
fn seed_override_and_jobs_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = catalog("c06-energy-lp.json");
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let res = bin(&["estimates", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "99", "--jobs", jobs]);
        assert!(res.status.code().is_some());
        fs::read(out.join("summary.json")).unwrap()
    };
    let (a, b) = (run("a", "1"), run("b", "3"));
    assert_eq!(a, b);
    let recorded = fs::read_to_string(dir.path().join("a/config.json")).unwrap();
    assert!(recorded.contains("\"seed\": 99"), "{recorded}");
}
