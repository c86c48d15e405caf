use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
n_modes = 3
washout = 20
horizon = 40
eval_starts = [20]
top_k = 2

[split]
train_len = 200

[region]
lat_min = -45.0
lat_max = 45.0
lon_min = 90.0
lon_max = 270.0

[model]
kind = "hqrc"
n_qubits = 3
n_reservoirs = 3
v_nodes = 5
"#;

fn hqrc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hqrc"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hqrc(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Synthetic dataset and a small config inside a fresh directory.
fn setup() -> (TempDir, String, String) {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    ok(
        tmp.path(),
        &[
            "synth", "--n-lat", "8", "--n-lon", "12", "--n-time", "300", "--rank", "3",
        ],
    );
    let data = tmp.path().join("synth.gsf");
    assert!(data.exists());
    (
        tmp,
        data.to_string_lossy().into_owned(),
        cfg.to_string_lossy().into_owned(),
    )
}

#[test]
fn train_forecast_metrics_round_trip() {
    let (tmp, data, cfg) = setup();
    let d = tmp.path();
    let base = ["--data", &data, "--config", &cfg];

    ok(d, &[&["pod", "fit"][..], &base].concat());
    for f in ["pod.bin", "spectrum.csv", "coeffs.csv", "pod.json"] {
        assert!(d.join(f).exists(), "{f}");
    }

    ok(d, &[&["train"][..], &base].concat());
    let train: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("train.json")).unwrap()).unwrap();
    assert_eq!(train["n_modes"], 3);
    assert!(d.join("model").join("readout.bin").exists());

    ok(d, &[&["forecast"][..], &base].concat());
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["evaluated"], 40);
    assert_eq!(m["truncated"], false);
    let model_rmse = m["model"]["rmse_grid"].as_f64().unwrap();
    assert!(model_rmse.is_finite() && model_rmse >= 0.0);
    assert!(d.join("final_grid.gsf").exists());

    // Scoring the written forecast externally gives the same numbers.
    let scored = d.join("scored");
    ok(
        &scored,
        &[
            &[
                "metrics",
                "--pred",
                d.join("forecast.csv").to_str().unwrap(),
            ][..],
            &["--pod", d.join("model").join("pod.bin").to_str().unwrap()],
            &["--start", "20"],
            &base,
        ]
        .concat(),
    );
    let s: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(scored.join("metrics.json")).unwrap()).unwrap();
    let again = s["prediction"]["rmse_grid"].as_f64().unwrap();
    assert!((again - model_rmse).abs() <= 1e-9 * model_rmse.max(1.0));
}

#[test]
fn same_seed_same_output() {
    let (tmp, data, cfg) = setup();
    let run = |name: &str| {
        let d = tmp.path().join(name);
        ok(
            &d,
            &["train", "--data", &data, "--config", &cfg, "--seed", "4"],
        );
        ok(
            &d,
            &["forecast", "--data", &data, "--config", &cfg, "--seed", "4"],
        );
        fs::read_to_string(d.join("forecast.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn pod_apply_with_sentinel() {
    let (tmp, data, cfg) = setup();
    let d = tmp.path();
    ok(d, &["pod", "fit", "--data", &data, "--config", &cfg]);
    let applied = d.join("apply");
    ok(
        &applied,
        &[
            "pod",
            "apply",
            "--pod",
            d.join("pod.bin").to_str().unwrap(),
            "--data",
            &data,
            "--config",
            &cfg,
            "--mask-sentinel",
            "-999",
        ],
    );
    assert!(applied.join("reconstruction.gsf").exists());
    let rows = fs::read_to_string(applied.join("coeffs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 301);
}

#[test]
fn sweep_ablate_perturb_write_reports() {
    let (tmp, data, cfg) = setup();
    let d = tmp.path();
    let base = ["--data", &data, "--config", &cfg];

    ok(d, &[&["sweep", "--limit", "2"][..], &base].concat());
    let sweep = fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(d.join("ensemble.json").exists());

    ok(
        d,
        &[&["ablate", "washout", "--dl", "10,20"][..], &base].concat(),
    );
    let table = fs::read_to_string(d.join("ablate_washout.csv")).unwrap();
    assert!(table.starts_with("metric,DL-10,DL-20"));
    assert_eq!(table.lines().count(), 5);

    ok(
        d,
        &[
            &[
                "ablate",
                "structure",
                "--axis",
                "n_qubits",
                "--values",
                "2,3",
            ][..],
            &base,
        ]
        .concat(),
    );
    assert_eq!(
        fs::read_to_string(d.join("ablate_n_qubits.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    ok(
        d,
        &[&["ablate", "modes", "--modes", "2,3"][..], &base].concat(),
    );
    assert!(d.join("ablate_modes.csv").exists());

    ok(d, &[&["perturb", "--draws", "3"][..], &base].concat());
    let p: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("perturb.json")).unwrap()).unwrap();
    assert!(p.is_object());
}

#[test]
fn sequential_flag_matches_parallel() {
    let (tmp, data, cfg) = setup();
    let run = |name: &str, extra: &[&str]| {
        let d = tmp.path().join(name);
        let args = [&["train", "--data", &data, "--config", &cfg][..], extra].concat();
        ok(&d, &args);
        let args = [&["forecast", "--data", &data, "--config", &cfg][..], extra].concat();
        ok(&d, &args);
        fs::read_to_string(d.join("forecast.csv")).unwrap()
    };
    assert_eq!(run("par", &[]), run("seq", &["--sequential"]));
}

#[test]
fn errors_exit_nonzero() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    let out = hqrc(d, &["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no dataset"));

    let out = hqrc(
        d,
        &["train", "--data", d.join("missing.gsf").to_str().unwrap()],
    );
    assert!(!out.status.success());

    let bad = d.join("bad.gsf");
    fs::write(&bad, b"not a gsf file").unwrap();
    let out = hqrc(d, &["pod", "fit", "--data", bad.to_str().unwrap()]);
    assert!(!out.status.success());

    let cfg = d.join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = hqrc(d, &["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parsing config"));

    let out = hqrc(
        d,
        &["forecast", "--data", "x.gsf", "--model-dir", "nowhere"],
    );
    assert!(!out.status.success());
}
