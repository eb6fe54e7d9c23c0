//! Black-box tests of the `mcc` binary: artifact layout, manifest replay,
//! exit codes, and the auxiliary subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcc"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Tiny inline two-moons transfer; fast enough to train many times.
fn small_config() -> &'static str {
    r#"{
        "scenario": {
            "kind": "uda",
            "num_classes": 2,
            "sources": [{"generator": "two_moons", "n_per_class": 40, "seed": 11}],
            "targets": [{
                "generator": "two_moons", "n_per_class": 40, "seed": 11,
                "shift": {"rotation_deg": 30.0, "noise_std": 0.1, "seed": 12}
            }]
        },
        "method": "mcc",
        "iterations": 60,
        "curve_every": 10
    }"#
}

fn write_config(dir: &Path, contents: &str) -> PathBuf {
    let path = dir.join("run.json");
    fs::write(&path, contents).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

const ARTIFACTS: [&str; 5] = [
    "manifest.json",
    "report.json",
    "curves.csv",
    "error_matrix.csv",
    "checkpoint.json",
];

#[test]
fn train_writes_the_full_artifact_set() {
    let dir = tmp("cli-train");
    let config = write_config(&dir, small_config());
    let out = dir.join("run");

    let output = run(&["train", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_ok(&output);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("target acc"), "summary line missing: {stdout}");

    for name in ARTIFACTS {
        assert!(out.join(name).exists(), "missing {name}");
    }

    // The manifest echoes a fully pinned configuration.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["iterations"], 60);
    assert_eq!(manifest["config"]["learning_rate"], 0.05);
    assert!(manifest["config"]["scenario"]["sources"][0]["seed"].is_u64());

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "mcc");
    assert_eq!(report["scenario"], "uda");
    assert_eq!(report["curves"].as_array().unwrap().len(), 6);

    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iteration,loss,"));
    assert_eq!(curves.lines().count(), 7);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tmp("cli-replay");
    let config = write_config(&dir, small_config());
    let first = dir.join("first");
    let second = dir.join("second");

    assert_ok(&run(&[
        "train",
        config.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--quiet",
    ]));
    assert_ok(&run(&[
        "train",
        first.join("manifest.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--quiet",
    ]));

    for name in ["report.json", "curves.csv", "error_matrix.csv", "checkpoint.json"] {
        let a = fs::read(first.join(name)).unwrap();
        let b = fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between original and replay");
    }
}

#[test]
fn seed_flag_reseeds_a_replayed_manifest() {
    let dir = tmp("cli-reseed");
    let config = write_config(&dir, small_config());
    let first = dir.join("first");
    let reseeded = dir.join("reseeded");

    assert_ok(&run(&[
        "train",
        config.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--quiet",
    ]));
    assert_ok(&run(&[
        "train",
        first.join("manifest.json").to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        reseeded.to_str().unwrap(),
        "--quiet",
    ]));

    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("report.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(reseeded.join("report.json")).unwrap()).unwrap();
    assert_eq!(b["seed"], 5);
    assert_ne!(a["curves"], b["curves"]);
}

#[test]
fn broken_configs_exit_one_without_side_effects() {
    let dir = tmp("cli-errors");

    // Unknown key, named in the error.
    let config = write_config(&dir, r#"{"scenario": "uda-two-moons", "temprature": 2.5}"#);
    let out = dir.join("never");
    let output = run(&["train", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("temprature"), "stderr: {stderr}");
    assert!(!out.exists(), "failed run must not create its output directory");

    // Unknown preset.
    let config = write_config(&dir, r#"{"scenario": "uda-three-moons"}"#);
    let output = run(&["train", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("uda-three-moons"));
    assert!(!out.exists());

    // JSON syntax errors come with a line number.
    let config = write_config(&dir, "{\n  \"scenario\": }");
    let output = run(&["train", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 2"));
}

#[test]
fn boundary_exports_a_grid_in_row_major_y_then_x_order() {
    let dir = tmp("cli-boundary");
    let config = write_config(&dir, small_config());
    let out = dir.join("run");
    assert_ok(&run(&[
        "train",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]));

    let output = run(&[
        "boundary",
        out.join("checkpoint.json").to_str().unwrap(),
        "--grid-res",
        "3",
        "--bounds",
        "-1,1,-1,1",
        "--quiet",
    ]);
    assert_ok(&output);

    let csv = fs::read_to_string(out.join("boundary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,pred,confidence");
    assert_eq!(lines.len(), 1 + 9);

    let coords: Vec<(f64, f64)> = lines[1..]
        .iter()
        .map(|line| {
            let mut fields = line.split(',');
            let x: f64 = fields.next().unwrap().parse().unwrap();
            let y: f64 = fields.next().unwrap().parse().unwrap();
            let pred: usize = fields.next().unwrap().parse().unwrap();
            let confidence: f64 = fields.next().unwrap().parse().unwrap();
            assert!(pred < 2);
            assert!((0.5..=1.0).contains(&confidence));
            (x, y)
        })
        .collect();
    assert_eq!(coords[..4], [(-1.0, -1.0), (0.0, -1.0), (1.0, -1.0), (-1.0, 0.0)]);
}

#[test]
fn ablate_trains_the_ladder_and_summarizes_in_order() {
    let dir = tmp("cli-ablate");
    let config = write_config(&dir, small_config());
    let out = dir.join("ablation");

    assert_ok(&run(&[
        "ablate",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]));

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "variant,final_target_accuracy,final_source_accuracy");
    let variants: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["cc", "cc+pr", "cc+pr+ur", "full"]);
    for variant in variants {
        assert!(out.join(variant).join("report.json").exists());
    }

    // A non-mcc method contradicts the subcommand and is rejected.
    let config = write_config(&dir, &small_config().replace("\"mcc\"", "\"dann\""));
    let output = run(&["ablate", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn sweep_ranks_the_grid_by_target_accuracy() {
    let dir = tmp("cli-sweep");
    let config = write_config(&dir, small_config());
    let out = dir.join("sweep");

    assert_ok(&run(&[
        "sweep",
        config.to_str().unwrap(),
        "--grid",
        "learning_rate=0.01,0.05",
        "--grid",
        "seed=0,1",
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]));

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "rank,learning_rate,seed,final_target_accuracy,final_source_accuracy");
    assert_eq!(lines.len(), 1 + 4);

    let accuracies: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    for pair in accuracies.windows(2) {
        assert!(pair[0] >= pair[1], "summary not sorted: {accuracies:?}");
    }
    assert!(out.join("learning_rate=0.01_seed=0").join("report.json").exists());
    assert!(out.join("learning_rate=0.05_seed=1").join("report.json").exists());

    // Duplicate grid keys are ambiguous and refused before training.
    let output = run(&[
        "sweep",
        config.to_str().unwrap(),
        "--grid",
        "seed=0",
        "--grid",
        "seed=1",
        "--out",
        dir.join("dup").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(!dir.join("dup").exists());
}

#[test]
fn verify_passes_and_respects_quiet() {
    let output = run(&["verify"]);
    assert_ok(&output);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("oracle-equivalence"), "stdout: {stdout}");
    assert!(stdout.contains("gradient-checks"));
    assert!(!stdout.contains("FAIL"));

    let output = run(&["verify", "--quiet"]);
    assert_ok(&output);
    assert!(output.stdout.is_empty());
}

#[test]
fn default_output_root_honors_the_environment_override() {
    let dir = tmp("cli-out-root");
    let config = write_config(&dir, small_config());

    let output = bin()
        .args(["train", config.to_str().unwrap(), "--quiet"])
        .env("MCC_OUT_ROOT", &dir)
        .output()
        .unwrap();
    assert_ok(&output);

    let expected = dir.join("custom-uda_mcc_seed0");
    assert!(expected.join("report.json").exists(), "expected {}", expected.display());
}
