//! End-to-end checks of the `porogen` binary: exit codes, output formats and
//! byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn porogen(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porogen"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_small(dir: &Path, out_name: &str, seed: &str) {
    let out = porogen(
        &[
            "synth", "--out", out_name, "--n", "12", "--size", "32", "--medium", "blob", "--phi",
            "0.3", "--corr-len", "2", "--mask", "corner:8", "--seed", seed,
        ],
        dir,
    );
    assert_ok(&out);
}

#[test]
fn usage_errors_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = porogen(&["synth", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = porogen(
        &["synth", "--out", "ds", "--n", "12", "--size", "32", "--mask", "bogus"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage error"));

    // eval without a data source is a usage problem
    let out = porogen(&["eval", "--checkpoint", "x.ckpt", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn io_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = porogen(
        &["stats", "--input", "missing.pgm", "--out", "c.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("i/o error"));

    fs::write(dir.path().join("garbage.pgm"), b"P9 not a pgm").unwrap();
    let out = porogen(
        &["stats", "--input", "garbage.pgm", "--out", "c.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = porogen(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "stats", "train", "reconstruct", "anneal", "eval", "plot"] {
        assert!(text.contains(sub), "help lists {sub}");
    }
}

#[test]
fn pipeline_is_byte_deterministic_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    synth_small(d, "ds1", "7");
    synth_small(d, "ds2", "7");
    for f in ["manifest.json", "pairs/0000_input.pgm", "pairs/0005_target.pgm", "pairs/0005_mask.pgm"] {
        assert_eq!(
            fs::read(d.join("ds1").join(f)).unwrap(),
            fs::read(d.join("ds2").join(f)).unwrap(),
            "{f} differs between identical synth runs"
        );
    }

    let train_args = |out: &str| {
        [
            "train", "--data", "ds1", "--out", out, "--epochs", "1", "--base-channels", "4",
            "--nz", "4", "--template", "2", "--seed", "3",
        ]
        .map(String::from)
        .to_vec()
    };
    let a_args = train_args("run1");
    let a: Vec<&str> = a_args.iter().map(String::as_str).collect();
    assert_ok(&porogen(&a, d));
    let b_args = train_args("run2");
    let b: Vec<&str> = b_args.iter().map(String::as_str).collect();
    assert_ok(&porogen(&b, d));
    assert_eq!(
        fs::read(d.join("run1/checkpoint.ckpt")).unwrap(),
        fs::read(d.join("run2/checkpoint.ckpt")).unwrap(),
        "checkpoints differ between identical training runs"
    );
    assert_eq!(
        fs::read(d.join("run1/loss_log.csv")).unwrap(),
        fs::read(d.join("run2/loss_log.csv")).unwrap()
    );

    for out in ["recon1", "recon2"] {
        assert_ok(&porogen(
            &[
                "reconstruct", "--checkpoint", "run1/checkpoint.ckpt", "--input",
                "ds1/pairs/0001_input.pgm", "--mask", "ds1/pairs/0001_mask.pgm", "--k", "2",
                "--seed", "5", "--out", out,
            ],
            d,
        ));
    }
    assert_eq!(
        fs::read(d.join("recon1/recon_00.pgm")).unwrap(),
        fs::read(d.join("recon2/recon_00.pgm")).unwrap()
    );

    for out in ["ev1", "ev2"] {
        assert_ok(&porogen(
            &[
                "eval", "--checkpoint", "run1/checkpoint.ckpt", "--data", "ds1",
                "--realizations", "4", "--r-max", "8", "--seed", "11", "--out", out,
            ],
            d,
        ));
    }
    assert_eq!(
        fs::read(d.join("ev1/report.json")).unwrap(),
        fs::read(d.join("ev2/report.json")).unwrap(),
        "eval reports differ between identical runs"
    );

    for (report, out) in [("ev1/report.json", "f1.svg"), ("ev2/report.json", "f2.svg")] {
        assert_ok(&porogen(&["plot", "--report", report, "--out", out], d));
    }
    assert_eq!(fs::read(d.join("f1.svg")).unwrap(), fs::read(d.join("f2.svg")).unwrap());

    for out in ["an1", "an2"] {
        assert_ok(&porogen(
            &[
                "anneal", "--input", "ds1/pairs/0001_input.pgm", "--mask",
                "ds1/pairs/0001_mask.pgm", "--reference", "ds1/pairs/0001_target.pgm",
                "--sweeps", "10", "--seed", "2", "--out", out,
            ],
            d,
        ));
    }
    assert_eq!(
        fs::read(d.join("an1/anneal.pgm")).unwrap(),
        fs::read(d.join("an2/anneal.pgm")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("an1/trace.csv")).unwrap(),
        fs::read(d.join("an2/trace.csv")).unwrap()
    );
}

#[test]
fn eval_prints_mean_pm_std_porosity_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d, "ds", "1");
    assert_ok(&porogen(
        &[
            "train", "--data", "ds", "--out", "run", "--epochs", "1", "--base-channels", "4",
            "--nz", "4", "--template", "2", "--seed", "1",
        ],
        d,
    ));
    let out = porogen(
        &[
            "eval", "--checkpoint", "run/checkpoint.ckpt", "--data", "ds", "--realizations",
            "20", "--r-max", "8", "--out", "ev",
        ],
        d,
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    // paper-style "mean ± std (target ...)" line
    assert!(
        text.contains("porosity over 20 realizations: 0.") && text.contains(" ± 0."),
        "missing porosity summary in:\n{text}"
    );
    assert!(text.contains("hard-data fidelity"));
    assert!(text.contains("diversity"));
    assert!(text.contains("wall-clock"));
    // timing stays out of the report file
    let report = fs::read_to_string(d.join("ev/report.json")).unwrap();
    assert!(!report.contains("wall"));
    assert!(report.contains("porosity_mean"));
}

#[test]
fn stats_se_direction_produces_single_direction_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d, "ds", "2");
    assert_ok(&porogen(
        &[
            "stats", "--input", "ds/pairs/0000_target.pgm", "--out", "se.csv", "--r-max", "6",
            "--direction", "se",
        ],
        d,
    ));
    let text = fs::read_to_string(d.join("se.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.is_empty() || l.contains(",SE,")));
    for kind in ["S2,", "L,", "C2,"] {
        assert!(text.contains(kind));
    }
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"n": 10, "seed": 9, "phi": 0.4}"#).unwrap();
    let out = porogen(
        &[
            "synth", "--config", "cfg.json", "--out", "ds", "--n", "40", "--size", "32",
            "--mask", "corner:8", "--phi", "0.2", "--seed", "0",
        ],
        d,
    );
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("10 samples"), "config n should win: {text}");
    assert!(text.contains("phi 0.4"), "config phi should win: {text}");
    let manifest = fs::read_to_string(d.join("ds/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));

    // unknown keys are rejected as usage errors
    fs::write(d.join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    let out = porogen(
        &["synth", "--config", "bad.json", "--out", "ds2", "--size", "32"],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
}
