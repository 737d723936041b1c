//! Behavior of the `wvae` binary: exit codes, file round trips, flag
//! precedence.

use std::path::Path;
use std::process::{Command, Output};

use wvae::eval::MetricReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wvae"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn dwt_idwt_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&[
        "synth",
        "--data",
        "synth:edges",
        "--count",
        "1",
        "--size",
        "16",
        "--seed",
        "5",
        "--out",
        &path_str(&data),
    ]);
    assert!(out.status.success());
    let image = data.join("edges_000.pgm");
    let dump = dir.path().join("edges.wvp");
    let back = dir.path().join("back.pgm");
    assert!(run(&[
        "dwt",
        "--levels",
        "3",
        "--out",
        &path_str(&dump),
        &path_str(&image)
    ])
    .status
    .success());
    assert!(run(&["idwt", "--out", &path_str(&back), &path_str(&dump)])
        .status
        .success());
    assert_eq!(
        std::fs::read(&image).unwrap(),
        std::fs::read(&back).unwrap()
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--steps",
        "0",
        "--out",
        &path_str(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["train", "--levels", "0"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown flags are config errors too (clap uses exit code 2).
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // Dimensions not divisible by 2^levels.
    let out = run(&["train", "--levels", "5", "--size", "16", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_format_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.wvp");
    std::fs::write(&garbage, b"not a dump").unwrap();
    let out = run(&[
        "idwt",
        "--out",
        &path_str(&dir.path().join("o.pgm")),
        &path_str(&garbage),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let not_pnm = dir.path().join("img.pgm");
    std::fs::write(&not_pnm, b"hello").unwrap();
    let out = run(&[
        "dwt",
        "--out",
        &path_str(&dir.path().join("o.wvp")),
        &path_str(&not_pnm),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn numerical_failure_exits_4() {
    // An absurd learning rate overflows the parameters within a few steps;
    // the finiteness guard must abort with exit code 4.
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--lr",
        "1e200",
        "--steps",
        "10",
        "--batch",
        "4",
        "--hidden",
        "8",
        "--count",
        "4",
        "--size",
        "8",
        "--levels",
        "1",
        "--out",
        &path_str(&dir.path().join("x")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn metrics_prints_one_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(run(&[
        "synth",
        "--data",
        "synth:gaussian-blobs",
        "--count",
        "2",
        "--size",
        "16",
        "--out",
        &path_str(&data),
    ])
    .status
    .success());
    let a = data.join("gaussian-blobs_000.pgm");
    let b = data.join("gaussian-blobs_001.pgm");
    let out = run(&["metrics", "--levels", "2", &path_str(&a), &path_str(&b)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let report: MetricReport = serde_json::from_str(text.trim()).unwrap();
    assert!(report.mse > 0.0);
    assert!(report.ssim < 1.0);

    // Identical images: mse 0, ssim 1.
    let out = run(&["metrics", &path_str(&a), &path_str(&a)]);
    let report: MetricReport =
        serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(report.mse, 0.0);
    assert!((report.ssim - 1.0).abs() < 1e-12);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        "steps=3\nbatch=4\nhidden=8\ncount=4\nsize=8\nlevels=1\nseed=2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        &path_str(&conf),
        "--steps",
        "2",
        "--out",
        &path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{out:?}");
    let log = std::fs::read_to_string(out_dir.join("runlog.jsonl")).unwrap();
    let steps = log
        .lines()
        .filter(|l| l.contains("\"kind\":\"step\""))
        .count();
    assert_eq!(steps, 2);
}

#[test]
fn synth_writes_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("imgs");
    assert!(run(&[
        "synth",
        "--data",
        "synth:checkerboard",
        "--count",
        "5",
        "--size",
        "8",
        "--out",
        &path_str(&out_dir),
    ])
    .status
    .success());
    let count = std::fs::read_dir(&out_dir).unwrap().count();
    assert_eq!(count, 5);

    // Non-dyadic size is a config error.
    let out = run(&[
        "synth",
        "--data",
        "synth:constant",
        "--size",
        "10",
        "--out",
        &path_str(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reconstruct_checks_image_dims_against_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    assert!(run(&[
        "train",
        "--steps",
        "2",
        "--batch",
        "4",
        "--hidden",
        "8",
        "--count",
        "4",
        "--size",
        "8",
        "--levels",
        "1",
        "--out",
        &path_str(&run_dir),
    ])
    .status
    .success());
    let ck = run_dir.join("checkpoint.wvn");

    // 16x16 inputs against an 8x8 checkpoint.
    let data = dir.path().join("big");
    assert!(run(&[
        "synth",
        "--data",
        "synth:edges",
        "--count",
        "1",
        "--size",
        "16",
        "--out",
        &path_str(&data)
    ])
    .status
    .success());
    let out = run(&[
        "reconstruct",
        "--checkpoint",
        &path_str(&ck),
        "--out",
        &path_str(&dir.path().join("recon")),
        &path_str(&data.join("edges_000.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Matching dims succeed and write metrics.jsonl.
    let recon_dir = dir.path().join("recon2");
    let out = run(&[
        "reconstruct",
        "--checkpoint",
        &path_str(&ck),
        "--data",
        "synth:edges",
        "--count",
        "2",
        "--size",
        "8",
        "--out",
        &path_str(&recon_dir),
    ]);
    assert!(out.status.success(), "{out:?}");
    let lines = std::fs::read_to_string(recon_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    for line in lines.lines() {
        let _: MetricReport = serde_json::from_str(line).unwrap();
    }
}
