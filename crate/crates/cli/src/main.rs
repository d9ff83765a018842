//! Batch driver: `srn-ibc verify | evolve | trajectory | process`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srn_ibc_cli::config::{ConfigError, ExperimentConfig};
use serde::Serialize;
use srn_ibc::bellprocess::{emission_ks, equivariance_test, jump_rate, kolmogorov_survival};
use srn_ibc::bohm::{
    integrate_trajectory, verify_trajectory_asymptotics, write_trajectory_csv, ConfigPoint, FieldSnapshot, FrozenField,
    TrajectoryOptions,
};
use srn_ibc::radial::{extract_boundary_coeffs, write_snapshot, CayleyStepper, MiniFockState, RadialHamiltonian};
use srn_ibc::verify::{run_suite, VerifyError, SUITES};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "srn-ibc", version, about = "Dirac particle creation at a naked Reissner-Nordstrom singularity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the process seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the walker fan-out (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an invariant suite: geometry, spinors, hamiltonian, bohm or process.
    Verify { suite: String },
    /// Evolve the initial state, writing snapshots and a boundary time series.
    Evolve,
    /// Integrate one Bohmian trajectory in the frozen initial field and fit its asymptotics.
    Trajectory,
    /// Run the jump process with the configured walkers and test equivariance.
    Process,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {msg}")]
    Run { context: &'static str, msg: String },
}

fn run_err<E: std::fmt::Display>(context: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Run { context, msg: e.to_string() }
}

/// Provenance line written at the top of every output file.
#[derive(Debug, Clone, Serialize)]
struct Stamp {
    version: &'static str,
    config_hash: String,
}

impl Stamp {
    fn line(&self) -> String {
        format!("srn-ibc {} config {}", self.version, self.config_hash)
    }
}

struct Output {
    dir: PathBuf,
    stamp: Stamp,
}

impl Output {
    fn new(dir: PathBuf, stamp: Stamp) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Self { dir, stamp })
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok((path, BufWriter::new(f)))
    }

    /// Write a file whose first line is `# <stamp>`.
    fn write_stamped(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name)?;
        writeln!(w, "# {}", self.stamp.line())
            .and_then(|_| body(&mut w))
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name)?;
        let doc = serde_json::json!({ "stamp": self.stamp, "report": value });
        serde_json::to_writer_pretty(&mut w, &doc).map_err(std::io::Error::other)
            .and_then(|_| writeln!(w))
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Usage("--config is required for this subcommand".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.process.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_output(cfg: &ExperimentConfig, command: &str) -> Result<Output, CliError> {
    let out = Output::new(cfg.output.dir.clone(), Stamp { version: VERSION, config_hash: cfg.hash()? })?;
    let (path, mut w) = out.create("config.toml")?;
    write!(w, "# {}\n# command {command}\n{}", out.stamp.line(), cfg.to_toml()?)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Io { path, source })?;
    Ok(out)
}

/// Returns whether the run passed its checks.
fn run(cli: &Cli) -> Result<bool, CliError> {
    match &cli.command {
        Command::Verify { suite } => cmd_verify(cli, suite),
        Command::Evolve => cmd_evolve(&load_config(cli)?),
        Command::Trajectory => cmd_trajectory(&load_config(cli)?),
        Command::Process => cmd_process(&load_config(cli)?),
    }
}

fn cmd_verify(cli: &Cli, suite: &str) -> Result<bool, CliError> {
    let report = match run_suite(suite, cli.seed.unwrap_or(1)) {
        Ok(r) => r,
        Err(VerifyError::UnknownSuite(s)) => {
            return Err(CliError::Usage(format!("unknown suite {s:?}; expected one of {}", SUITES.join(", "))))
        }
        Err(e) => return Err(run_err("verify")(e)),
    };
    for c in &report.checks {
        eprintln!("{} {}: value {:.6e}, tolerance {:.1e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    let stamp = Stamp { version: VERSION, config_hash: "none".into() };
    println!("{}", serde_json::json!({ "stamp": stamp, "report": report, "passed": report.passed() }));
    if let Some(dir) = &cli.out {
        Output::new(dir.clone(), stamp)?.write_json(&format!("verify_{suite}.json"), &report)?;
    }
    Ok(report.passed())
}

#[derive(Debug, Serialize)]
struct EvolveSummary {
    steps: usize,
    t_end: f64,
    total_norm_drift: f64,
    particle_norm_end: f64,
    psi0_sqr_end: f64,
    snapshots: Vec<PathBuf>,
}

fn cmd_evolve(cfg: &ExperimentConfig) -> Result<bool, CliError> {
    let out = open_output(cfg, "evolve")?;
    let op = cfg.operator()?;
    let mut state = cfg.initial_state()?;
    let grid = op.grid;
    let stepper = CayleyStepper::new(&op, cfg.stepper.dt).map_err(run_err("Cayley stepper"))?;
    let norm0 = state.total_norm(&grid);
    let every = if cfg.stepper.snapshot_every == 0 { cfg.stepper.steps.max(1) } else { cfg.stepper.snapshot_every };
    let mut rows = Vec::with_capacity(cfg.stepper.steps + 1);
    let mut snapshots = Vec::new();
    let mut y = state.to_scaled(&grid);
    for step in 0..=cfg.stepper.steps {
        if step > 0 {
            stepper.step(&mut y);
            state = MiniFockState::from_scaled(&y, &grid, op.layout);
        }
        let t = step as f64 * cfg.stepper.dt;
        rows.push(series_row(&state, &op, t)?);
        if step % every == 0 || step == cfg.stepper.steps {
            let name = format!("snapshot_{step:06}.dat");
            snapshots.push(out.write_stamped(&name, |w| {
                write_snapshot(&mut *w, &state, &op, t).map_err(std::io::Error::other)
            })?);
        }
    }
    out.write_stamped("timeseries.csv", |w| {
        writeln!(w, "t,particle_norm,psi0_sqr,re_c_minus,im_c_minus,re_c_plus,im_c_plus,rate")?;
        for r in &rows {
            writeln!(w, "{}", r.iter().map(|v| format!("{v:.12e}")).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    })?;
    let summary = EvolveSummary {
        steps: cfg.stepper.steps,
        t_end: cfg.stepper.steps as f64 * cfg.stepper.dt,
        total_norm_drift: (state.total_norm(&grid) - norm0).abs(),
        particle_norm_end: state.particle_norm(&grid),
        psi0_sqr_end: state.psi0.norm_sqr(),
        snapshots,
    };
    out.write_json("evolve.json", &summary)?;
    eprintln!("evolved {} steps; norm drift {:.3e}; 1-particle probability {:.6}", summary.steps, summary.total_norm_drift, summary.particle_norm_end);
    Ok(true)
}

/// `t, ‖φ‖², |Ψ⁰|², c₋, c₊, σ` (σ is NaN where the rate is undefined).
fn series_row(state: &MiniFockState, op: &RadialHamiltonian, t: f64) -> Result<[f64; 8], CliError> {
    let b = extract_boundary_coeffs(state, op).map_err(run_err("boundary values"))?;
    let (cm, cp) = (b.scheme_minus, b.scheme_plus);
    let rate = jump_rate(cm, cp, state.psi0).unwrap_or(f64::NAN);
    Ok([t, state.particle_norm(&op.grid), state.psi0.norm_sqr(), cm.re, cm.im, cp.re, cp.im, rate])
}

fn cmd_trajectory(cfg: &ExperimentConfig) -> Result<bool, CliError> {
    let out = open_output(cfg, "trajectory")?;
    let op = cfg.operator()?;
    let state = cfg.initial_state()?;
    let field = FrozenField(FieldSnapshot::from_state(&state, &op).map_err(run_err("field snapshot"))?);
    let q = op.setup.metric.abs_charge();
    let t = &cfg.trajectory;
    let opts = TrajectoryOptions { r_min: t.r_min * q, rtol: t.rtol, atol: t.atol, ..Default::default() };
    let start = ConfigPoint { r: t.r0 * q, theta: t.theta, phi: t.phi };
    let path = integrate_trajectory(&field, start, 0.0, t.t_end, &opts).map_err(run_err("trajectory"))?;
    out.write_stamped("trajectory.csv", |w| write_trajectory_csv(&mut *w, &path.samples))?;
    let report = verify_trajectory_asymptotics(&field, start, 0.0, (t.window[0], t.window[1]), &opts)
        .map_err(run_err("asymptotics"))?;
    #[derive(Serialize)]
    struct Doc<'a> {
        end: &'a srn_ibc::bohm::TrajectoryEnd,
        steps: usize,
        asymptotics: &'a srn_ibc::bohm::AsymptoticsReport,
        exponent_rel_err: f64,
        prefactor_rel_err: f64,
        phi_slope_rel_err: f64,
        c_az_rel_err: f64,
    }
    out.write_json(
        "asymptotics.json",
        &Doc {
            end: &path.end,
            steps: path.steps,
            asymptotics: &report,
            exponent_rel_err: report.exponent_rel_err(),
            prefactor_rel_err: report.prefactor_rel_err(),
            phi_slope_rel_err: report.phi_slope_rel_err(),
            c_az_rel_err: report.c_az_rel_err(),
        },
    )?;
    eprintln!(
        "trajectory: {:?}; exponent {:.6} (1/3), prefactor {:.6} vs {:.6}, phi slope {:.6} vs {:.6}",
        path.end, report.exponent, report.prefactor, report.coeffs.c_rad, report.phi_slope, report.coeffs.phi_slope
    );
    Ok(true)
}

fn cmd_process(cfg: &ExperimentConfig) -> Result<bool, CliError> {
    let out = open_output(cfg, "process")?;
    let op = cfg.operator()?;
    let state = cfg.initial_state()?;
    let params = cfg.process_params()?;
    let (record, report) = equivariance_test(&op, &state, &params).map_err(run_err("process"))?;
    let jsonl = out.dir.join("process.jsonl");
    write_jsonl_stamped(&out, &jsonl, &record)?;
    out.write_stamped("vacuum.csv", |w| {
        writeln!(w, "t,p_vacuum_born,p_vacuum_empirical")?;
        for (k, (b, e)) in report.vacuum_born.iter().zip(&report.vacuum_empirical).enumerate() {
            writeln!(w, "{:.12e},{b:.12e},{e:.12e}", k as f64 * params.dt)?;
        }
        Ok(())
    })?;
    let (ks_cos, ks_phi, n_em) = emission_ks(&record.events);
    #[derive(Serialize)]
    struct Doc<'a> {
        seed: u64,
        passed: bool,
        equivariance: &'a srn_ibc::bellprocess::EquivarianceReport,
        emission_ks_cos_theta: f64,
        emission_ks_phi: f64,
        emission_ks_survival: [f64; 2],
        emissions_tested: usize,
    }
    let passed = report.passed();
    out.write_json(
        "equivariance.json",
        &Doc {
            seed: params.seed,
            passed,
            equivariance: &report,
            emission_ks_cos_theta: ks_cos,
            emission_ks_phi: ks_phi,
            emission_ks_survival: [kolmogorov_survival(ks_cos), kolmogorov_survival(ks_phi)],
            emissions_tested: n_em,
        },
    )?;
    for c in &report.checkpoints {
        eprintln!(
            "{} t={:.3} P(empty) born {:.4} empirical {:.4} z {:+.2}; TV {:.4} (bound {:.4})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.t, c.p_vacuum_born, c.p_vacuum_empirical, c.z_vacuum, c.tv, c.tv_bound()
        );
    }
    eprintln!("absorptions {}, emissions {}, lost walkers {}", report.absorptions, report.emissions, report.lost_walkers);
    Ok(passed)
}

fn write_jsonl_stamped(out: &Output, path: &Path, record: &srn_ibc::bellprocess::ProcessRecord) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.into(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "{}", serde_json::json!({ "record": "stamp", "version": out.stamp.version, "config_hash": out.stamp.config_hash }))
        .and_then(|_| record.write_jsonl(&mut w))
        .and_then(|_| w.flush())
        .map_err(io)
}
