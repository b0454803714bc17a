//! End-to-end tests of the `spectre` binary: exit codes, stdout contracts,
//! CSV determinism and the matrix file format.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spectre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectre"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spectre-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_value(out: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(&format!("{key} = ")) {
            return rest
                .split_whitespace()
                .next()
                .unwrap()
                .parse()
                .unwrap_or(f64::NAN);
        }
    }
    panic!("no `{key} = ` line in output:\n{text}");
}

#[test]
fn edge_white_noise_closed_forms() {
    let out = spectre(&["edge", "--c", "0.25", "--scenario.k", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((stdout_value(&out, "b") - 2.25).abs() < 1e-8);
    assert!((stdout_value(&out, "m_b") + 4.0 / 3.0).abs() < 1e-8);
    assert!((stdout_value(&out, "p_lim") - 0.5).abs() < 1e-8);
}

#[test]
fn edge_reports_subcritical_sources() {
    let out = spectre(&["edge", "--c", "0.5", "--snr-db", "-6"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("subcritical"), "{text}");
}

#[test]
fn detect_on_stored_matrix() {
    let dir = tmp_dir("detect");
    let matrix = dir.join("y.txt");
    // strong rank-one signal (outer product) over pseudo-random noise
    let mut state = 0x12345678u64;
    let mut lcg = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut rows = Vec::new();
    for i in 0..8 {
        let u = 1.0 + 0.2 * (i as f64).sin();
        let mut cols = Vec::new();
        for j in 0..16 {
            let v = (0.9 * j as f64).cos();
            cols.push(format!(
                "{:.6e}{:+.6e}i",
                u * v + 0.3 * lcg(),
                0.3 * lcg()
            ));
        }
        rows.push(cols.join(","));
    }
    std::fs::write(&matrix, rows.join("\n")).unwrap();
    let out = spectre(&[
        "detect",
        "--io.input",
        matrix.to_str().unwrap(),
        "--detection.l",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("k_hat = 1"), "{text}");
    assert!(text.contains("p_hat_1"), "{text}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_input_is_config_error() {
    let out = spectre(&["detect"]);
    assert_eq!(out.status.code(), Some(2));
    let out = spectre(&["detect", "--io.input", "/nonexistent/path.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_matrix_reports_location() {
    let dir = tmp_dir("badmat");
    let matrix = dir.join("bad.txt");
    std::fs::write(&matrix, "1+0i,2+0i\n3+0i,oops\n").unwrap();
    let out = spectre(&["detect", "--io.input", matrix.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn contradictory_config_rejected() {
    let dir = tmp_dir("badcfg");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "command = \"fig-power\"\n[scenario]\nk = 3\nthetas_deg = [1.0, 2.0, 3.0]\n[detection]\nl = 2\n",
    )
    .unwrap();
    let out = spectre(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // unknown keys are rejected too
    std::fs::write(&cfg, "command = \"edge\"\nfrobnicate = 1\n").unwrap();
    let out = spectre(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fig_power_writes_deterministic_csv() {
    let dir = tmp_dir("figpow");
    let run = |out_dir: &Path| {
        let out = spectre(&[
            "fig-power",
            "--trials",
            "60",
            "--seed",
            "9",
            "--sweep.snr-db",
            "10",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let d1 = dir.join("a");
    let d2 = dir.join("b");
    run(&d1);
    run(&d2);
    for name in ["power_nmse_proposed.csv", "power_nmse_oracle.csv"] {
        let f1 = std::fs::read(d1.join(name)).unwrap();
        let f2 = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(f1, f2, "{name} not byte-identical across runs");
        let text = String::from_utf8(f1).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sweep,metric,ci_low,ci_high,n_trials,theory"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("10,"), "{row}");
        assert_eq!(row.split(',').count(), 6);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn fig_fluct_csv_has_predictions() {
    let dir = tmp_dir("figfluct");
    let out = spectre(&[
        "fig-fluct",
        "--trials",
        "40",
        "--seed",
        "3",
        "--scenario.n",
        "40",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.join("fluctuation_eig_var.csv")).unwrap();
    assert!(text.starts_with("sweep,metric,ci_low,ci_high,n_trials,theory"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn music_writes_scan_csv() {
    let dir = tmp_dir("music");
    let matrix = dir.join("y.txt");
    // rank-one steering-like signal so a peak exists
    let n = 10usize;
    let t = 24usize;
    let theta: f64 = 0.2;
    let mut rows = Vec::new();
    for i in 0..n {
        let h_re = (std::f64::consts::PI * i as f64 * theta.sin()).cos();
        let h_im = -(std::f64::consts::PI * i as f64 * theta.sin()).sin();
        let mut cols = Vec::new();
        for j in 0..t {
            let s = 2.0 * (1.0 + (j as f64 * 0.7).sin());
            let eps = 0.01 * ((i + 3 * j) % 11) as f64 / 11.0;
            cols.push(format!(
                "{:.6e}{:+.6e}i",
                h_re * s + eps,
                h_im * s - eps
            ));
        }
        rows.push(cols.join(","));
    }
    std::fs::write(&matrix, rows.join("\n")).unwrap();
    let out = spectre(&[
        "music",
        "--io.input",
        matrix.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--grid-step-deg",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scan = std::fs::read_to_string(dir.join("music_scan.csv")).unwrap();
    assert!(scan.starts_with("theta_deg,gamma"));
    assert!(scan.lines().count() > 300);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_command_prints_usage() {
    let out = spectre(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
    let out = spectre(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn threads_env_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_spectre"))
        .args(["edge", "--c", "0.5"])
        .env("SPECTRE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_spectre"))
        .args(["edge", "--c", "0.5", "--scenario.k", "0"])
        .env("SPECTRE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
