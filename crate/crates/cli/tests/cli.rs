use std::fs;
use std::path::Path;
use std::process::Command;

use divlab_cli::{execute, suite_config, ConfigError, RunConfig, RunOptions};
use serde_json::Value;

const MINIMAL: &str = r#"
[[checks]]
name = "laplacian"
grid = { dim = 1, side = 1, per_unit = 32 }
run = { kind = "eigensolve", k = 3 }
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_divlab"));
    for var in ["DIVLAB_SUITE", "DIVLAB_CONFIG", "DIVLAB_OUT", "DIVLAB_SEED", "DIVLAB_WORKERS", "DIVLAB_SAMPLES"] {
        c.env_remove(var);
    }
    c
}

fn report(dir: &Path, file: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(file)).unwrap()).unwrap()
}

fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_time_ms");
            m.values_mut().for_each(strip_timing);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn minimal_config_lists_stencil_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(MINIMAL).unwrap();
    let summary = execute(&cfg, dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(summary.exit_code(), 0);
    let doc = report(dir.path(), "checks/00_laplacian.json");
    let rows = doc["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let h: f64 = 1.0 / 32.0;
    for (k, row) in rows.iter().enumerate() {
        let exact = 4.0 / (h * h) * ((k + 1) as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2);
        let got = row["eigenvalue"].as_f64().unwrap();
        assert!((got - exact).abs() <= 1e-10 * exact, "E{} = {got}, expected {exact}", k + 1);
    }
    let table = fs::read_to_string(dir.path().join("checks/00_laplacian.rows.tsv")).unwrap();
    assert!(table.starts_with("eigenvalue\tindex\tresidual\tthreshold"));
    assert!(dir.path().join("resolved_config.toml").exists());
    let manifest = report(dir.path(), "manifest.json");
    assert_eq!(manifest["status"], "complete");
}

#[test]
fn radius_at_half_period_is_rejected_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(
        &cfg_path,
        r#"
[[checks]]
name = "bad"
grid = { dim = 1, side = 4, per_unit = 8 }
run = { kind = "scaling", sequence = { period = 2.0, radius = 1.0 }, rel_tol = 0.01 }
"#,
    )
    .unwrap();
    let out = bin().arg("--config").arg(&cfg_path).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("checks[0].run.sequence.radius"), "{stderr}");

    let err = execute(&RunConfig::from_toml(&fs::read_to_string(&cfg_path).unwrap()).unwrap(), dir.path(), &RunOptions::default())
        .unwrap_err();
    assert_eq!(err.downcast_ref::<ConfigError>().unwrap().path, "checks[0].run.sequence.radius");
}

#[test]
fn archived_resolved_config_reproduces_reports() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let mut cfg = suite_config("ucp", None).unwrap();
    cfg.checks.retain(|c| ["projector-checkerboard", "caccioppoli-1d", "constants"].contains(&c.name.as_str()));
    cfg.seed = 11;
    execute(&cfg, first.path(), &RunOptions::default()).unwrap();
    let archived = RunConfig::load(&first.path().join("resolved_config.toml")).unwrap();
    execute(&archived, second.path(), &RunOptions { workers: Some(1), ..Default::default() }).unwrap();
    for entry in fs::read_dir(first.path().join("checks")).unwrap() {
        let name = entry.unwrap().file_name();
        let file = format!("checks/{}", name.to_string_lossy());
        if file.ends_with(".json") {
            let (mut a, mut b) = (report(first.path(), &file), report(second.path(), &file));
            strip_timing(&mut a);
            strip_timing(&mut b);
            assert_eq!(a, b, "{file}");
        } else {
            assert_eq!(fs::read(first.path().join(&file)).unwrap(), fs::read(second.path().join(&file)).unwrap());
        }
    }
}

#[test]
fn scaling_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("scaling").arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let summary = fs::read_to_string(dir.path().join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn reduced_sample_wegner_is_flagged_low_power() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = suite_config("wegner", Some(10)).unwrap();
    execute(&cfg, dir.path(), &RunOptions::default()).unwrap();
    let doc = report(dir.path(), "checks/02_wegner-l2.json");
    let notes = doc["report"]["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("low-power")), "{notes:?}");
    assert_eq!(doc["report"]["inputs"]["parameters"]["options"]["n_samples"], 10);
}

#[test]
fn unknown_suite_lists_valid_names() {
    let out = bin().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid suites: ucp, lifting, wegner, scaling, mollify, all"));
}

#[test]
fn unmet_negative_control_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("name = \"laplacian\"", "name = \"laplacian\"\nexpect_failure = true");
    let summary = execute(&RunConfig::from_toml(&text).unwrap(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(summary.exit_code(), 1);
}

#[test]
fn failing_item_leaves_manifest_of_completed_items() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{MINIMAL}\n[[checks]]\nname = \"missing-dump\"\ngrid = {{ dim = 1, side = 1, per_unit = 8 }}\nfield = {{ kind = \"dump\", path = \"/nonexistent/field.txt\" }}\nrun = {{ kind = \"eigensolve\" }}\n"
    );
    let summary = execute(&RunConfig::from_toml(&text).unwrap(), dir.path(), &RunOptions::default()).unwrap();
    assert_eq!(summary.exit_code(), 1);
    let manifest = report(dir.path(), "manifest.json");
    let done = manifest["completed"].as_array().unwrap();
    assert_eq!(done.len(), 2);
    assert_eq!(done[0]["as_expected"], true);
    assert_eq!(done[1]["status"], "error");
    assert!(done[1]["error"].as_str().unwrap().contains("field dump"));
}

#[test]
fn env_vars_mirror_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, MINIMAL).unwrap();
    let out_dir = dir.path().join("o");
    let out = bin()
        .env("DIVLAB_CONFIG", &cfg_path)
        .env("DIVLAB_OUT", &out_dir)
        .env("DIVLAB_SEED", "42")
        .env("DIVLAB_RESOLUTION_MULTIPLIER", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = RunConfig::load(&out_dir.join("resolved_config.toml")).unwrap();
    assert_eq!(resolved.seed, 42);
    assert_eq!(resolved.checks[0].seed, Some(42));
    assert_eq!(resolved.checks[0].grid.as_ref().unwrap().per_unit, 64);
}
