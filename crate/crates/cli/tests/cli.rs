use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn scorekit(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorekit"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = scorekit(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline(dir: &Path) {
    let d = dir.to_str().unwrap();
    ok(dir, &["--seed", "7", "synth", "--kind", "essential", "--n", "150", "--count", "6"]);
    ok(dir, &["--seed", "7", "pool", "--scenes", d, "--m", "60"]);
    ok(dir, &["--seed", "7", "sweep", "--scenes", d, "--count", "12"]);
    ok(dir, &["--seed", "7", "report", "--grids", d, "--n", "2", "--trials", "20"]);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 20);
    for n in names {
        let x = fs::read(a.path().join(&n)).unwrap();
        let y = fs::read(b.path().join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }
}

#[test]
fn seed_is_printed() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["--seed", "42", "synth", "--kind", "homography", "--n", "50"]);
    assert!(out.lines().next().unwrap().contains("42"));
    assert!(d.path().join("scene_0000.json").exists());
    assert!(d.path().join("correspondences_0000.csv").exists());
}

#[test]
fn missing_required_flag_exits_with_usage_code() {
    let d = tempfile::tempdir().unwrap();
    let o = scorekit(d.path(), &["synth", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = scorekit(d.path(), &["--error-json", "synth", "--kind", "essential"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "usage");
    let o = scorekit(d.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_range_exits_with_usage_code() {
    let d = tempfile::tempdir().unwrap();
    let o = scorekit(d.path(), &["synth", "--kind", "essential", "--n", "10", "--gamma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_parameters() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 3, "synth": {"kind": "essential", "n": 40, "gamma": 0.5}}"#).unwrap();
    let out = ok(d.path(), &["--config", cfg.to_str().unwrap(), "synth", "--n", "30"]);
    assert!(out.contains("seed: 3"));
    let scene = json(&d.path().join("scene_0000.json"));
    assert_eq!(scene["config"]["n"], 30);
    assert_eq!(scene["config"]["gamma"], 0.5);
}

#[test]
fn oracle_curve_is_flat_and_not_worse() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let text = fs::read_to_string(d.path().join("curve.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let oracle = header.iter().position(|h| *h == "oracle").unwrap();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in &rows {
        assert_eq!(r[oracle], rows[0][oracle]);
        for (j, v) in r.iter().enumerate().skip(1) {
            assert!(rows[0][oracle] <= *v, "column {}", header[j]);
        }
    }
}

#[test]
fn report_schema_is_stable() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let r = json(&d.path().join("report.json"));
    let keys: Vec<&String> = r.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["magsac_fit", "seed", "sensitivity", "validation"]);
    assert_eq!(r["seed"], 7);
    for v in r["validation"].as_array().unwrap() {
        let mut k: Vec<&String> = v.as_object().unwrap().keys().collect();
        k.sort();
        assert_eq!(k, ["best_threshold", "instances", "maa", "median", "method"]);
    }
    assert_eq!(r["validation"].as_array().unwrap().len(), 5);
    assert_eq!(r["sensitivity"].as_array().unwrap().len(), 4);
}

#[test]
fn report_lists_missing_inputs() {
    let d = tempfile::tempdir().unwrap();
    let o = scorekit(d.path(), &["report", "--grids", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid_oracle.csv") && err.contains("grid_msac.json"), "{err}");
}

#[test]
fn mismatched_pools_are_rejected() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (a.path().to_str().unwrap(), b.path().to_str().unwrap());
    ok(a.path(), &["--seed", "1", "synth", "--kind", "essential", "--n", "60", "--count", "2"]);
    ok(b.path(), &["--seed", "2", "synth", "--kind", "essential", "--n", "60", "--count", "2"]);
    ok(b.path(), &["pool", "--scenes", db, "--m", "10"]);
    let o = scorekit(a.path(), &["sweep", "--scenes", da, "--pools", db, "--count", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn magsac_fit_reproduces_nu4_constants() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["magsac-fit", "--nu", "4"]);
    let f = &json(&d.path().join("magsac_fit.json"))[0];
    let num = |k: &str| f[k].as_f64().unwrap();
    assert!((num("kappa") - 3.64).abs() < 0.01);
    assert!((num("tau") - 0.99).abs() < 0.02, "{}", num("tau"));
    assert!((num("sigma") - 0.96).abs() < 0.02, "{}", num("sigma"));
}

#[test]
fn lo_writes_a_monotone_trace() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "--kind", "essential", "--n", "200"]);
    ok(p, &["pool", "--scenes", p.to_str().unwrap(), "--m", "50"]);
    let scene = p.join("scene_0000.json");
    let pool = p.join("pool_0000.json");
    ok(
        p,
        &["lo", "--scene", scene.to_str().unwrap(), "--pool", pool.to_str().unwrap(), "--family", "msac", "--tau", "3"],
    );
    let lo = json(&p.join("lo.json"));
    assert_eq!(lo["monotone"], true);
    assert!(fs::read_to_string(p.join("trace.csv")).unwrap().starts_with("iter,objective,step_norm,accepted"));
}
