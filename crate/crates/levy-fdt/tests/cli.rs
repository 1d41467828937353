//! End-to-end checks of the command-line binary: exit codes, determinism,
//! file formats.

use std::path::Path;
use std::process::{Command, Output};

fn levyfdt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levyfdt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = levyfdt(&["stationary", "--config", "no_such_file.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no_such_file.toml"), "stderr: {stderr}");
}

#[test]
fn invalid_method_exits_2_and_lists_valid_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = levyfdt(&["response", "--method", "magic"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    for m in ["direct", "agarwal", "seifert", "semigroup"] {
        assert!(stderr.contains(m), "stderr: {stderr}");
    }
}

#[test]
fn bad_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "modle = \"tanh-well\"\n");
    let out = levyfdt(&["audit", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn simulate_is_seed_deterministic_and_headed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        "model = \"tanh-well\"\n\
         [ensemble]\nn_traj = 300\n\
         [integrator]\nt_max = 0.5\nburn_in = 1.0\nthinning = 0.1\n",
    );
    let run = |out_dir: &str| {
        let out = levyfdt(
            &["simulate", "--config", &cfg, "--seed", "7", "--output", out_dir],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        std::fs::read(dir.path().join(out_dir).join("ensemble.csv")).unwrap()
    };
    let a = run("out_a");
    let b = run("out_b");
    assert_eq!(a, b, "same seed must give byte-identical output");
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("t,O_tanh_mean,O_tanh_stderr"), "{text}");
    assert!(text.starts_with("# version:"));
    assert!(text.contains("# config_hash:"));
}

#[test]
fn stationary_uniform_for_zero_drift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "flat.toml",
        "model = \"custom\"\n\
         [model_params]\ndrift = \"0*x\"\ndiffusion = \"1\"\n\
         [grid]\nhalf_width = 8.0\nn_points = 128\n",
    );
    let out = levyfdt(&["stationary", "--config", &cfg, "--output", "flat"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = std::fs::read_to_string(dir.path().join("flat/stationary.csv")).unwrap();
    let uniform = 1.0 / 16.0;
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let (_, v) = line.split_once(',').unwrap();
        let v: f64 = v.parse().unwrap();
        assert!((v - uniform).abs() < 1e-8 * uniform, "{v} vs {uniform}");
    }
    assert!(dir.path().join("flat/stationary_log.json").exists());
}

#[test]
fn stationary_breach_of_small_domain_fails_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tiny.toml",
        "model = \"tanh-well\"\n[grid]\nhalf_width = 2.0\nn_points = 64\n",
    );
    let out = levyfdt(&["stationary", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("boundary mass") || stderr.contains("mass"), "stderr: {stderr}");
}

#[test]
fn semigroup_response_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "pde.toml",
        "model = \"tanh-well\"\n\
         [grid]\nhalf_width = 16.0\nn_points = 512\n\
         [response]\nt_max = 1.0\ndt = 0.1\n",
    );
    let run = |out_dir: &str| {
        let out = levyfdt(
            &["response", "--config", &cfg, "--method", "semigroup", "--output", out_dir],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        std::fs::read(dir.path().join(out_dir).join("response_semigroup.csv")).unwrap()
    };
    assert_eq!(run("r1"), run("r2"));
}

#[test]
fn audit_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = levyfdt(&["audit", "--output", "audit_out"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = std::fs::read_to_string(dir.path().join("audit_out/audit.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v.get("verdict").is_some());
    assert!(v.get("dissipativity_k1").is_some());
}
