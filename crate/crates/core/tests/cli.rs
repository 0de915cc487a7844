//! End-to-end checks of the `mcg` binary: subcommands, exit codes, and the
//! file formats they emit.

use std::path::{Path, PathBuf};
use std::process::Command;

fn mcg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcg"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mcg_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn make_phantom_is_deterministic_per_seed() {
    let d1 = temp_dir("phantom1");
    let d2 = temp_dir("phantom2");
    for d in [&d1, &d2] {
        let out = mcg()
            .args([
                "make-phantom",
                "--kind",
                "eight-gaussians-2d",
                "--count",
                "200",
                "--seed",
                "9",
                "--out-dir",
            ])
            .arg(d)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(d1.join("points.raw")).unwrap();
    let b = std::fs::read(d2.join("points.raw")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn solve_from_spec_file_writes_artifacts() {
    let dir = temp_dir("solve");
    let spec_path = dir.join("run.toml");
    std::fs::write(
        &spec_path,
        format!(
            r#"
task = "inpaint"
seed = 11
out-dir = "{}"

[data]
n = 16
l = 2

[sampler]
nfe = 60
alpha-prime = 0.1
"#,
            dir.join("run").display()
        ),
    )
    .unwrap();
    let out = mcg().args(["solve", "--spec"]).arg(&spec_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.join("run");
    assert!(run.join("reconstruction.raw").exists());
    assert!(run.join("steps.csv").exists());
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# mcg-metrics v1\n"));
    let steps = std::fs::read_to_string(run.join("steps.csv")).unwrap();
    assert!(steps.starts_with("# mcg-steps v1\n"));
    assert_eq!(steps.lines().count(), 2 + 60, "one diagnostics row per step");
}

#[test]
fn train_score_then_solve_with_weights() {
    let dir = temp_dir("train");
    let status = mcg()
        .args([
            "make-phantom",
            "--kind",
            "eight-gaussians-2d",
            "--count",
            "256",
            "--seed",
            "3",
            "--out-dir",
        ])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let model = dir.join("model.bin");
    let loss = dir.join("loss.txt");
    let out = mcg()
        .args(["train-score", "--dataset"])
        .arg(dir.join("points.raw"))
        .args(["--nfe", "60", "--iterations", "400", "--seed", "5", "--out"])
        .arg(&model)
        .arg("--loss-log")
        .arg(&loss)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.exists());
    let log = std::fs::read_to_string(&loss).unwrap();
    let first: Vec<&str> = log.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(first.len(), 2, "loss log lines are `iteration loss`");
    first[0].parse::<usize>().unwrap();
    first[1].parse::<f64>().unwrap();

    // Solve the toy task with the trained network.
    let spec_path = dir.join("run.toml");
    std::fs::write(
        &spec_path,
        format!(
            r#"
task = "inpaint"
seed = 4
out-dir = "{}"

[data]
phantom = "eight-gaussians-2d"

[model]
kind = "mlp"
weights = "{}"

[sampler]
nfe = 60
alpha-prime = 0.3
"#,
            dir.join("mlp-run").display(),
            model.display()
        ),
    )
    .unwrap();
    let out = mcg().args(["solve", "--spec"]).arg(&spec_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.join("mlp-run/metrics.csv")).unwrap();
    assert!(metrics.contains("ok"));
}

#[test]
fn ablate_writes_sweep_table_and_nfe_diagnostic() {
    let dir = temp_dir("ablate");
    let spec_path = dir.join("run.toml");
    std::fs::write(
        &spec_path,
        format!(
            r#"
task = "inpaint"
seed = 2
out-dir = "{}"

[data]
n = 12
l = 2

[sampler]
alpha-prime = 0.1
variant = "none"
"#,
            dir.join("sweep").display()
        ),
    )
    .unwrap();
    let out = mcg()
        .args(["ablate", "--spec"])
        .arg(&spec_path)
        .args(["--sweep", "nfe", "--values", "20,60", "--seeds", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.join("sweep/sweep.csv")).unwrap();
    assert!(table.starts_with("# mcg-sweep v1\n"));
    assert_eq!(table.lines().count(), 2 + 4);
    let diag = std::fs::read_to_string(dir.join("sweep/nfe-diagnostic.txt")).unwrap();
    assert!(diag.contains("mean MSE by NFE"));
}

#[test]
fn verify_geometry_exit_codes() {
    let dir = temp_dir("geometry");
    let ok = mcg()
        .args(["verify-geometry", "--seed", "1", "--out-dir"])
        .arg(dir.join("ok"))
        .status()
        .unwrap();
    assert!(ok.success());
    for name in ["concentration.csv", "projector.csv", "tangency.csv"] {
        assert!(dir.join("ok").join(name).exists(), "{name} missing");
    }
    let broken = mcg()
        .args([
            "verify-geometry",
            "--seed",
            "1",
            "--inject-bug",
            "negate-vjp",
            "--out-dir",
        ])
        .arg(dir.join("bug"))
        .status()
        .unwrap();
    assert!(!broken.success(), "injected bug must fail the battery");
}

#[test]
fn solve_rejects_missing_inputs() {
    let dir = temp_dir("badspec");
    let spec_path = dir.join("run.toml");
    std::fs::write(
        &spec_path,
        r#"
task = "inpaint"
seed = 1
out-dir = "out"

[model]
weights = "/definitely/not/here.bin"
"#,
    )
    .unwrap();
    let out = mcg().args(["solve", "--spec"]).arg(&spec_path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("does not exist"), "stderr: {err}");
}

#[test]
fn raw_files_roundtrip_through_cli_artifacts() {
    // The reconstruction written by `solve` parses back with the documented
    // header + little-endian payload layout.
    let dir = temp_dir("raw");
    let out = mcg()
        .args([
            "solve", "--task", "inpaint", "--seed", "6", "--nfe", "40", "--alpha-prime", "0.1",
            "--out-dir",
        ])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let raw = read_raw_header(&dir.join("reconstruction.raw"));
    assert_eq!(raw, (1, 50, 1), "default vector task is 1 x 50 x 1");
}

fn read_raw_header(path: &Path) -> (usize, usize, usize) {
    let bytes = std::fs::read(path).unwrap();
    let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
    let header = std::str::from_utf8(&bytes[..newline]).unwrap();
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(bytes.len() - newline - 1, dims.iter().product::<usize>() * 8);
    (dims[0], dims[1], dims[2])
}
