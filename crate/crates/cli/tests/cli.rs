use std::path::{Path, PathBuf};
use std::process::Command;

use srn_ibc_cli::config::{BoundaryConfig, ConfigError, ExperimentConfig, InitialState};

const BIN: &str = env!("CARGO_BIN_EXE_srn-ibc");

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn creation() -> ExperimentConfig {
    ExperimentConfig::load(&repo_config("creation.toml")).unwrap()
}

/// A small coupled run: coarse grid, short horizon, few walkers.
fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = creation();
    cfg.grid.dr = 0.02;
    cfg.grid.n = 1100;
    cfg.stepper.dt = 0.02;
    cfg.stepper.steps = 300;
    cfg.stepper.snapshot_every = 100;
    cfg.process.walkers = 300;
    cfg.process.checkpoints = 3;
    cfg.output.dir = dir.to_path_buf();
    cfg
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> PathBuf {
    let path = dir.join("input.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().unwrap()
}

/// Data rows of a CSV written by the driver (after the stamp and header lines).
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn config_round_trip_is_identity() {
    for name in ["creation.toml", "trajectory.toml"] {
        let cfg = ExperimentConfig::load(&repo_config(name)).unwrap();
        let text = cfg.to_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(text, again.to_toml().unwrap());
        assert_eq!(cfg.hash().unwrap(), again.hash().unwrap());
    }
}

#[test]
fn hash_tracks_content() {
    let a = creation();
    let mut b = a.clone();
    b.process.seed += 1;
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    let mut c = a.clone();
    c.output.dir = "elsewhere".into();
    assert_eq!(a.hash().unwrap(), c.hash().unwrap());
    assert_eq!(a.hash().unwrap().len(), 64);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = creation();
    cfg.boundary = BoundaryConfig::Ibc { a: [1.0, 1.0, 0.0, 2.0], g: [1.0, 0.0] };
    assert!(matches!(cfg.validate(), Err(ConfigError::Radial(_))));
    let mut cfg = creation();
    cfg.metric.source_mass = 3.0;
    assert!(matches!(cfg.validate(), Err(ConfigError::Geometry(_))));
    let mut cfg = creation();
    cfg.sector.kappa = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = creation();
    cfg.initial = InitialState::Gaussian { center: 6.0, width: 0.0, plus: [1.0, 0.0], minus: [0.0, 0.0] };
    assert!(cfg.validate().is_err());
    let text = creation().to_toml().unwrap().replace("[grid]", "[grid]\nspacing = 1.0");
    assert!(matches!(ExperimentConfig::from_toml(&text), Err(ConfigError::Parse(_))));
}

#[test]
fn verify_unknown_suite_is_a_usage_error() {
    let out = run(&["verify", "optics"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn verify_spinors_emits_machine_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "spinors", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["report"]["checks"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("verify_spinors.json").exists());
}

#[test]
fn missing_config_is_a_usage_error() {
    assert_eq!(run(&["evolve"]).status.code(), Some(2));
}

#[test]
fn evolve_from_vacuum_creates_particles() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.initial = InitialState::Vacuum;
    let path = write_config(&cfg, dir.path());
    let out = run(&["evolve", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("timeseries.csv"));
    assert_eq!(rows.len(), 301);
    // |Ψ⁰|² strictly decreasing over the first steps while ‖φ‖² grows.
    for w in rows[..20].windows(2) {
        assert!(w[1][2] < w[0][2] && w[1][1] > w[0][1], "{w:?}");
    }
    for r in &rows {
        assert!((r[1] + r[2] - 1.0).abs() < 1e-10);
    }
    let stamp = std::fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    assert!(stamp.starts_with(&format!("# srn-ibc {} config {}", env!("CARGO_PKG_VERSION"), cfg.hash().unwrap())));
    for step in [0, 100, 200, 300] {
        let snap = dir.path().join(format!("snapshot_{step:06}.dat"));
        let parsed = srn_ibc::radial::read_snapshot(std::io::BufReader::new(std::fs::File::open(snap).unwrap())).unwrap();
        assert!((parsed.time - step as f64 * 0.02).abs() < 1e-12);
    }
}

#[test]
fn creation_grows_with_coupling_strength() {
    let early = |g: f64| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.initial = InitialState::Vacuum;
        cfg.boundary = BoundaryConfig::Ibc { a: [1.0, 0.0, 0.0, 1.0], g: [g, 0.0] };
        cfg.stepper.steps = 10;
        let path = write_config(&cfg, dir.path());
        assert!(run(&["evolve", "--config", path.to_str().unwrap()]).status.success());
        csv_rows(&dir.path().join("timeseries.csv"))[10][1]
    };
    let (weak, strong) = (early(0.3), early(0.6));
    assert!(strong > weak && weak > 0.0, "{weak} {strong}");
}

#[test]
fn decoupled_vacuum_stays_vacuum() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.initial = InitialState::Vacuum;
    cfg.boundary = BoundaryConfig::Extension { theta: 0.0 };
    cfg.stepper.steps = 50;
    let path = write_config(&cfg, dir.path());
    assert!(run(&["evolve", "--config", path.to_str().unwrap()]).status.success());
    for r in csv_rows(&dir.path().join("timeseries.csv")) {
        assert_eq!(r[2], 1.0);
    }
}

#[test]
fn trajectory_reports_cube_root_law() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["trajectory", "--config", repo_config("trajectory.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("asymptotics.json")).unwrap()).unwrap();
    let rep = &v["report"];
    assert!(rep["exponent_rel_err"].as_f64().unwrap() < 0.01);
    assert!(rep["phi_slope_rel_err"].as_f64().unwrap() < 0.05);
    assert!(rep["end"]["Absorbed"].is_object());
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r[2] == 0.5));
}

#[test]
fn process_is_seed_repeatable_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let path = write_config(&cfg, dir.path());
    let go = |seed: &str, threads: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = run(&["process", "--config", path.to_str().unwrap(), "--seed", seed, "--threads", threads, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("process.jsonl")).unwrap()
    };
    let a = go("7", "1", "a");
    let b = go("7", "4", "b");
    let c = go("8", "4", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/equivariance.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["seed"], 7);
    assert_eq!(v["report"]["passed"], true);
    let vac = csv_rows(&dir.path().join("a/vacuum.csv"));
    assert_eq!(vac.len(), 301);
}
