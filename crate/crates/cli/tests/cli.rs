use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn addt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_addt"))
        .current_dir(dir)
        .env_remove("ADDT_THREADS")
        .args(args)
        .output()
        .expect("run addt")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Linear-in-time degradation with deterministic pseudo-noise.
fn write_data(dir: &Path) {
    let mut text = String::from("temperature,time,response\n");
    let mut k = 0u32;
    for temp in [50.0f64, 65.0, 80.0] {
        for t in [0.0f64, 192.0, 600.0, 1800.0, 3120.0, 4320.0] {
            let x = -11605.0 / (temp + 273.15);
            for _ in 0..5 {
                k += 1;
                let noise = 0.02 * (k as f64 * 12.9898).sin();
                let y = 1.0 - 3.5 * (0.3 * x).exp() * t + noise;
                text.push_str(&format!("{temp},{t},{y:.6}\n"));
            }
        }
    }
    std::fs::write(dir.join("data.csv"), text).unwrap();
}

fn setup() -> TempDir {
    let dir = TempDir::new().unwrap();
    write_data(dir.path());
    dir
}

#[test]
fn fit_document_embeds_version_and_config() {
    let dir = setup();
    let out = addt(
        dir.path(),
        &["fit", "--input", "data.csv", "--degree", "2", "--knots", "3", "-o", "fit.json"],
    );
    ok(&out);
    let doc = read(dir.path().join("fit.json"));
    assert_eq!(doc["tool"], "addt");
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(doc["config"]["command"]["fit"]["degree"], 2);
    assert_eq!(doc["config"]["command"]["fit"]["data"]["kelvin_offset"], 273.16);
    let r = &doc["result"];
    assert_eq!(r["spec"]["interior_knots"].as_array().unwrap().len(), 3);
    let beta = r["beta"].as_f64().unwrap();
    assert!(beta > 0.1 && beta < 0.6, "beta {beta}");
    let gamma: Vec<f64> = serde_json::from_value(r["gamma"].clone()).unwrap();
    assert!(gamma.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn fit_with_fixed_knot_locations() {
    let dir = setup();
    let out = addt(
        dir.path(),
        &["fit", "--input", "data.csv", "--degree", "1", "--knot-locations", "800,300"],
    );
    ok(&out);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["result"]["spec"]["interior_knots"], serde_json::json!([300.0, 800.0]));
    assert_eq!(doc["result"]["knot_policy"]["kind"], "fixed");
}

#[test]
fn relative_mttf_resolves_against_the_initial_level() {
    let dir = setup();
    ok(&addt(dir.path(), &["fit", "--input", "data.csv", "-o", "fit.json"]));
    let out = addt(
        dir.path(),
        &["mttf", "--fit", "fit.json", "--temp", "30", "--threshold", "0.7", "--relative"],
    );
    ok(&out);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let fit = read(dir.path().join("fit.json"));
    let g0 = fit["result"]["gamma"][0].as_f64().unwrap();
    let r = &doc["result"];
    assert!((r["D_f"].as_f64().unwrap() - 0.7 * g0).abs() < 1e-12);
    assert!(r["m_f"].as_f64().unwrap() > 0.0);
    assert!(r["ci_lower"].is_null());
    assert!(r["y_M"].as_f64().is_some());
}

#[test]
fn bootstrap_is_seed_reproducible_and_feeds_mttf_intervals() {
    let dir = setup();
    ok(&addt(dir.path(), &["fit", "--input", "data.csv", "-o", "fit.json"]));
    let boot = |threads: &str, name: &str| {
        ok(&addt(
            dir.path(),
            &[
                "--threads", threads, "bootstrap", "--input", "data.csv", "--fit", "fit.json", "-B", "30",
                "--seed", "5", "--temp", "30", "--threshold", "0.7", "--relative", "-o", name,
                "--csv", "samples.csv",
            ],
        ));
        read(dir.path().join(name))
    };
    let a = boot("1", "a.json");
    let b = boot("2", "b.json");
    assert_eq!(a["result"], b["result"]);
    assert_eq!(a["seed"], 5);
    let csv = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);

    ok(&addt(
        dir.path(),
        &[
            "mttf", "--fit", "fit.json", "--temp", "30", "--threshold", "0.7", "--relative",
            "--bootstrap", "a.json", "-o", "m.json",
        ],
    ));
    let m = read(dir.path().join("m.json"));
    let interval = a["result"]["intervals"]
        .as_array()
        .unwrap()
        .iter()
        .find(|iv| iv["name"] == "mttf")
        .unwrap()
        .clone();
    let r = &m["result"];
    assert_eq!(r["bootstrap_used"], 30);
    assert!((r["ci_lower"].as_f64().unwrap() - interval["quantile"]["lower"].as_f64().unwrap()).abs() < 1e-9);
    assert!((r["ci_upper"].as_f64().unwrap() - interval["quantile"]["upper"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn select_knots_report_feeds_bootstrap() {
    let dir = setup();
    ok(&addt(
        dir.path(),
        &["select-knots", "--input", "data.csv", "--degrees", "1,2", "--n-max", "3", "-o", "sel.json"],
    ));
    let doc = read(dir.path().join("sel.json"));
    let winner = doc["result"]["winner_fit"]["aic"].as_f64().unwrap();
    for c in doc["result"]["candidates"].as_array().unwrap() {
        assert!(winner <= c["aic"].as_f64().unwrap() + 1e-9);
    }
    ok(&addt(
        dir.path(),
        &["bootstrap", "--input", "data.csv", "--fit", "sel.json", "-B", "5"],
    ));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = setup();
    let scenario = serde_json::json!({
        "name": "tiny",
        "temps": [50.0, 65.0, 80.0],
        "times": [192.0, 600.0, 1800.0, 3120.0, 4320.0],
        "reps_per_cell": 5,
        "time_zero": {"temp_c": 50.0, "reps": 10},
        "truth": {"kind": "parametric", "b0": 1.0, "b1": -3.5, "b2": 0.3, "sigma": 0.02, "rho": 0.0},
        "kelvin_offset": 273.15,
        "n_datasets": 2,
        "full_datasets": 3,
        "seed": 1,
        "mttf": {"temp_use": 30.0, "threshold": 0.5, "relative": true, "time_divisor": 168.0},
        "selection": {"degrees": [1, 2], "n_max": 2}
    });
    std::fs::write(dir.path().join("sc.json"), scenario.to_string()).unwrap();
    let run = || {
        ok(&addt(
            dir.path(),
            &["simulate", "--scenario", "sc.json", "--full", "--seed", "42", "-o", "s.json", "--csv-dir", "csv"],
        ));
        std::fs::read(dir.path().join("s.json")).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["seed"], 42);
    assert_eq!(doc["result"]["datasets"], 3);
    assert_eq!(doc["result"]["study"], "misspecification");
    assert!(dir.path().join("csv/pointwise.csv").exists());
}

#[test]
fn validation_errors_exit_2_without_output() {
    let dir = setup();
    let out = addt(dir.path(), &["fit", "--input", "missing.csv", "-o", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    ok(&addt(dir.path(), &["fit", "--input", "data.csv", "-o", "fit.json"]));
    let out = addt(
        dir.path(),
        &["bootstrap", "--input", "data.csv", "--fit", "fit.json", "--alpha", "1.5", "-o", "b.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = addt(dir.path(), &["--threads", "0", "fit", "--input", "data.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = addt(
        dir.path(),
        &["fit", "--input", "data.csv", "--knots", "2", "--knot-locations", "1,2"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = addt(
        dir.path(),
        &["mttf", "--fit", "fit.json", "--temp", "30", "--threshold", "5", "-o", "m.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    for name in ["x.json", "b.json", "m.json"] {
        assert!(!dir.path().join(name).exists(), "{name} was written");
    }
    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn numerical_failure_exits_3() {
    let dir = setup();
    // 18 cells cannot carry 30 interior knots at any beta.
    let out = addt(dir.path(), &["fit", "--input", "data.csv", "--knots", "30", "-o", "f.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("f.json").exists());
}
