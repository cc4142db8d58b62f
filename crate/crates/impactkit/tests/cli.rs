//! End-to-end runs of the binary against simulated panels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use impactkit::config::{Overrides, RunConfig, OUT_ENV};
use impactkit::pipeline::{cmd_fit, Context};
use serde_json::Value;

fn impactkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impactkit")).args(args).env_remove(OUT_ENV).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a panel (and its config) into `dir`; extra JSON is merged into the config.
fn simulate(dir: &Path, seed: &str, units: usize, tweak: Value) -> PathBuf {
    let base = dir.join("base.json");
    let mut cfg = serde_json::json!({
        "simulate": { "units": units },
        "solver": { "starts": 3 },
        "bsts": { "draws": 600, "burn_in": 100 },
    });
    merge(&mut cfg, tweak);
    fs::write(&base, cfg.to_string()).unwrap();
    let sim = dir.join("sim");
    let o = impactkit(&["simulate", "-c", path(&base), "--seed", seed, "--out", path(&sim)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    sim.join("simulated_config.json")
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (_, Value::Null) => {}
        (a, b) => *a = b,
    }
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn simulate_then_fit_writes_provenance_everywhere() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "3", 6, Value::Null);
    let out = tmp.path().join("fit");
    let o = impactkit(&["fit", "-c", path(&config), "--out", path(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["weights.csv", "paths.csv", "balance.csv", "fit.json", "fig8.svg", "fig8_trend.svg"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        match name.rsplit('.').next().unwrap() {
            "csv" => assert!(text.starts_with("# provenance: {"), "{name}"),
            "svg" => assert!(text.contains("<metadata>"), "{name}"),
            _ => {
                let v: Value = serde_json::from_str(&text).unwrap();
                assert_eq!(v["provenance"]["command"], "fit");
                assert_eq!(v["provenance"]["seed"], 3);
                assert!(v["provenance"]["config"].is_object());
                assert_eq!(v["provenance"]["panel_sha256"].as_str().unwrap().len(), 64);
            }
        }
    }
}

#[test]
fn cli_and_library_agree_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "8", 6, Value::Null);
    let out = tmp.path().join("cli");
    assert_eq!(code(&impactkit(&["fit", "-c", path(&config), "--out", path(&out)])), 0);
    let written: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();

    let mut cfg = RunConfig::from_file(&config).unwrap();
    cfg.apply(&Overrides { out: Some(tmp.path().join("lib")), ..Overrides::default() });
    let fit = cmd_fit(&Context::new(cfg.resolve().unwrap())).unwrap();
    let result = &written["result"]["fit"];
    assert_eq!(result["gap"], serde_json::to_value(&fit.gap).unwrap());
    assert_eq!(result["weights"], serde_json::to_value(&fit.weights).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "5", 6, Value::Null);
    let out = tmp.path().join("report");
    let run = || {
        let o = impactkit(&["report", "-c", path(&config), "--out", path(&out), "--jobs", "2"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        read_dir_bytes(&out)
    };
    let first = run();
    assert!(first.contains_key("report.json") && first.contains_key("report.md"));
    assert_eq!(first, run());
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "6", 6, Value::Null);
    let out = tmp.path().join("rob");
    let run = |jobs: &str| {
        let o = impactkit(&["robustness", "-c", path(&config), "--out", path(&out), "--jobs", jobs]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let mut files = read_dir_bytes(&out);
        // Provenance records the job count, so compare results only.
        let v: Value = serde_json::from_slice(&files.remove("robustness.json").unwrap()).unwrap();
        v["result"].clone()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn unknown_treated_unit_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "1", 6, Value::Null);
    let o = impactkit(&["fit", "-c", path(&config), "--treated", "nowhere", "--out", path(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn draws_not_exceeding_burn_in_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "1", 6, serde_json::json!({ "bsts": { "draws": 100, "burn_in": 100 } }));
    let o = impactkit(&["bsts", "-c", path(&config), "--out", path(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn leave_one_out_with_two_donors_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let config = simulate(tmp.path(), "2", 3, Value::Null);
    let o = impactkit(&["robustness", "-c", path(&config), "--out", path(&tmp.path().join("x"))]);
    assert_ne!(code(&o), 0);
}

#[test]
fn constant_predictor_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("unit,variable,year,value\n");
    for (u, base) in [("a", 10.0), ("b", 12.0), ("c", 9.0), ("d", 11.5)] {
        for y in 2000..2020 {
            csv.push_str(&format!("{u},y,{y},{}\n", base + (y - 2000) as f64 * 0.5));
            csv.push_str(&format!("{u},z,{y},1\n"));
        }
    }
    fs::write(tmp.path().join("panel.csv"), csv).unwrap();
    let cfg = serde_json::json!({
        "panel": "panel.csv",
        "outcome": "y",
        "treated": "a",
        "treatment_year": 2015,
        "predictors": [{ "variable": "y" }, { "variable": "z" }],
    });
    let file = tmp.path().join("run.json");
    fs::write(&file, cfg.to_string()).unwrap();
    let o = impactkit(&["fit", "-c", path(&file), "--out", path(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_panel_is_a_validation_error() {
    let o = impactkit(&["fit", "--panel", "/nonexistent/panel.csv", "--treated", "a", "--treatment-year", "2000"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn output_directory_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let run = |extra: &[&str]| {
        let mut args = vec!["simulate", "--seed", "4"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_impactkit"))
            .args(&args)
            .env(OUT_ENV, &env_dir)
            .current_dir(tmp.path())
            .output()
            .unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    assert!(env_dir.join("simulated_panel.csv").exists());
    assert_eq!(code(&run(&["--out", path(&flag_dir)])), 0);
    assert!(flag_dir.join("simulated_panel.csv").exists());
}
