//! End-to-end runs of the `hypodens` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hypodens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypodens")).args(args).output().expect("binary runs")
}

fn hypodens_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypodens"))
        .args(args)
        .env("HYPODENS_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn heisenberg_norm_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = hypodens(&[
        "norm",
        "--model",
        "heisenberg",
        "--delta",
        "0.01",
        "--y",
        "0,0,1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let value: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("delta=0.01 norm="))
        .expect("norm line")
        .parse()
        .unwrap();
    // 1/(√2 δ)
    assert!((value - 1.0 / (2f64.sqrt() * 0.01)).abs() < 1e-9, "{value}");
    assert!((value - 70.71068).abs() < 5e-6);
    let csv = read(dir.path(), "norm.csv");
    assert!(csv.starts_with("# hypodens subcommand=norm config_hash="));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    // missing value for --model
    assert_eq!(hypodens(&["norm", "--model"]).status.code(), Some(2));
    // no model at all
    assert_eq!(hypodens(&["norm", "--out", out_dir]).status.code(), Some(2));
    assert_eq!(hypodens(&["norm", "--model", "klein-bottle", "--out", out_dir]).status.code(), Some(3));
    assert_eq!(
        hypodens(&["norm", "--model", "heisenberg", "--delta-grid", "0.1,-1", "--out", out_dir]).status.code(),
        Some(4)
    );
    assert_eq!(hypodens(&["norm", "--model", "heisenberg", "--x0", "0,0", "--out", out_dir]).status.code(), Some(4));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let nested = blocker.join("sub");
    assert_eq!(
        hypodens(&["norm", "--model", "heisenberg", "--out", nested.to_str().unwrap()]).status.code(),
        Some(5)
    );
    assert_eq!(hypodens_env(&["norm", "--model", "heisenberg", "--out", out_dir], "zero").status.code(), Some(2));
    assert_eq!(hypodens(&["verify", "--criteria", "99", "--out", out_dir]).status.code(), Some(2));
}

#[test]
fn config_file_round_trip_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "model = \"grushin\"\nx0 = [0.5, 0.0]\ndelta_grid = [0.05, 0.1]\nseed = 11\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = hypodens(&[
        "norm",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = read(&out_dir, "config.toml");
    assert!(written.contains("seed = 12") && written.contains("model = \"grushin\""), "{written}");
    let report: serde_json::Value = serde_json::from_str(&read(&out_dir, "report.json")).unwrap();
    assert_eq!(report["seed"], 12);
    assert_eq!(report["results"]["norm"]["rows"].as_array().unwrap().len(), 2);

    // the written config reloads to the same experiment
    let again = dir.path().join("again");
    let out = hypodens(&[
        "norm",
        "--config",
        out_dir.join("config.toml").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&out_dir, "report.json"), read(&again, "report.json"));

    std::fs::write(&cfg, "model = \"grushin\"\n\nrho = -1.0\n").unwrap();
    let out = hypodens(&["norm", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &Path| {
        vec![
            "density".to_string(),
            "--model".into(),
            "heisenberg-drift".into(),
            "--paths".into(),
            "2000".into(),
            "--steps".into(),
            "16".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let run = |out: &Path, threads: &str| {
        let args = args(out);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = hypodens_env(&args, threads);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&a, "1");
    run(&b, "3");
    for name in ["report.json", "density_diagonal.csv", "density_lower.csv", "density_tail.csv", "density_diagonal.dat"] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let report: serde_json::Value = serde_json::from_str(&read(&a, "report.json")).unwrap();
    assert!(report["results"]["density"]["diagonal"]["slope"]["slope"].is_f64());
    assert!(read(&a, "timings.txt").starts_with("stage\tseconds"));
}

#[test]
fn small_suites_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--paths", "200", "--steps", "8", "--delta-grid", "0.05,0.1"];
    for (cmd, model, file) in [
        ("simulate", "elliptic", "simulate.csv"),
        ("decompose", "heisenberg-t", "decomposition_residuals.csv"),
        ("support", "heisenberg", "support.csv"),
        ("covariance", "heisenberg", "covariance.csv"),
    ] {
        let out = dir.path().join(cmd);
        let mut args = vec![cmd, "--model", model, "--out", out.to_str().unwrap()];
        args.extend(common);
        let o = hypodens(&args);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let text = read(&out, file);
        assert!(text.starts_with("# hypodens subcommand="), "{cmd}");
        assert!(text.lines().count() > 2, "{cmd}");
    }
    let residuals = read(&dir.path().join("decompose"), "decomposition_residuals.csv");
    assert!(residuals.lines().nth(1).unwrap() == "model,delta,steps,rms_residual,max_residual");
}

#[test]
fn verify_subset_reports_each_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = hypodens(&["verify", "--criteria", "6,7", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("criterion")).count(), 2);
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);
    assert!(read(dir.path(), "verify.csv").contains("\n6,true,true,"));
}
