//! Experiment configuration: a TOML document with one section per concern.
//!
//! ```toml
//! [metric]            # Q, M of the source; q, m of the Dirac particle
//! source_charge = 2.0
//! source_mass = 1.0
//! charge = 0.0
//! mass = 0.0
//!
//! [sector]
//! kappa = -1
//! twice_mj = 1
//!
//! [boundary]          # kind = "ibc" (a, g = [re, im]) or "extension" (theta)
//! kind = "ibc"
//! a = [1.0, 0.0, 0.0, 1.0]
//! g = [0.7071067811865476, 0.0]
//!
//! [grid]
//! dr = 0.01
//! n = 2500
//!
//! [stepper]
//! dt = 0.01
//! steps = 1200
//! snapshot_every = 100
//!
//! [initial]           # kind = "vacuum", "gaussian" or "boundary-profile"
//! kind = "gaussian"
//! center = 6.0
//! width = 1.0
//! plus = [0.0, 1.0]
//! minus = [1.0, 0.0]
//!
//! [trajectory]
//! r0 = 0.05           # start radius in units of |Q|
//! theta = 0.5
//! phi = 0.0
//! t_end = 50.0
//! r_min = 1e-6        # hand-off radius in units of |Q|
//! window = [1e-4, 1e-2]
//!
//! [process]
//! walkers = 10000
//! seed = 1
//! checkpoints = 10
//! handoff = 1e-3
//!
//! [output]
//! dir = "out"
//! ```

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use srn_ibc::bellprocess::{ProcessError, ProcessParams};
use srn_ibc::geometry::{GeometryError, MetricParams};
use srn_ibc::radial::{IbcParams, MiniFockState, RadialError, RadialGrid, RadialHamiltonian, SectorBoundary, SectorSetup};
use srn_ibc::spinors::{AngularSector, SpinorError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Radial(#[from] RadialError),
    #[error(transparent)]
    Spinor(#[from] SpinorError),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error("invalid value for {name}: {value}")]
    Invalid { name: &'static str, value: String },
}

/// Complex number as `[re, im]`.
pub type C2 = [f64; 2];

fn c(v: C2) -> Complex64 {
    Complex64::new(v[0], v[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorConfig {
    pub kappa: i32,
    pub twice_mj: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Ibc { a: [f64; 4], g: C2 },
    Extension { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    pub dt: f64,
    pub steps: usize,
    /// Write a snapshot every this many steps (0: initial and final only).
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialState {
    /// `Ψ = (1, 0)`.
    Vacuum,
    /// Radial bump `(φ₊, φ₋) ∝ (plus, minus)·exp(−((R − center)/width)²)` with `Ψ⁰ = 0`.
    Gaussian { center: f64, width: f64, plus: C2, minus: C2 },
    /// IBC-consistent near-boundary profile with boundary values `(c₋, c₊)`.
    BoundaryProfile { c_minus: C2, c_plus: C2, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Start radius in units of `|Q|`.
    pub r0: f64,
    pub theta: f64,
    pub phi: f64,
    pub t_end: f64,
    /// Hand-off radius in units of `|Q|`.
    pub r_min: f64,
    /// Fit window for the asymptotics, in units of `|Q|`.
    pub window: [f64; 2],
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
}

fn default_rtol() -> f64 {
    1e-10
}

fn default_atol() -> f64 {
    1e-16
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { r0: 0.05, theta: 0.5, phi: 0.0, t_end: 50.0, r_min: 1e-6, window: [1e-4, 1e-2], rtol: default_rtol(), atol: default_atol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub walkers: usize,
    pub seed: u64,
    /// Number of equally spaced checkpoints after `t = 0`.
    pub checkpoints: usize,
    /// Hand-off radius in units of `|Q|`.
    pub handoff: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub record_samples: bool,
}

fn default_bins() -> usize {
    40
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self { walkers: 10_000, seed: 1, checkpoints: 10, handoff: 1e-3, bins: default_bins(), record_samples: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: MetricParams,
    pub sector: SectorConfig,
    pub boundary: BoundaryConfig,
    pub grid: GridConfig,
    pub stepper: StepperConfig,
    pub initial: InitialState,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub process: ProcessConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical serialization, as lowercase hex. The output directory is
    /// excluded: it does not affect results.
    pub fn hash(&self) -> Result<String, ConfigError> {
        let mut canonical = self.clone();
        canonical.output.dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Check every module precondition before any run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.operator()?;
        self.initial_state()?;
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid { name, value: v.to_string() })
            }
        };
        positive("stepper.dt", self.stepper.dt)?;
        let t = &self.trajectory;
        positive("trajectory.r0", t.r0)?;
        positive("trajectory.r_min", t.r_min)?;
        positive("trajectory.rtol", t.rtol)?;
        positive("trajectory.atol", t.atol)?;
        if !(t.r_min < t.window[0] && t.window[0] < t.window[1] && t.window[1] < t.r0) {
            return Err(ConfigError::Invalid { name: "trajectory.window", value: format!("{:?} with r_min {} and r0 {}", t.window, t.r_min, t.r0) });
        }
        if self.process.checkpoints == 0 {
            return Err(ConfigError::Invalid { name: "process.checkpoints", value: "0".into() });
        }
        self.process_params()?.validate()?;
        Ok(())
    }

    pub fn setup(&self) -> Result<SectorSetup, ConfigError> {
        let metric = MetricParams::new(self.metric.source_charge, self.metric.source_mass, self.metric.charge, self.metric.mass)?;
        AngularSector::new(self.sector.twice_mj, self.sector.kappa)?;
        let boundary = match self.boundary {
            BoundaryConfig::Ibc { a, g } => SectorBoundary::Ibc(IbcParams::new(a, c(g))?),
            BoundaryConfig::Extension { theta } => {
                if !theta.is_finite() {
                    return Err(ConfigError::Invalid { name: "boundary.theta", value: theta.to_string() });
                }
                SectorBoundary::Extension { theta }
            }
        };
        Ok(SectorSetup { metric, kappa: self.sector.kappa, twice_mj: self.sector.twice_mj, boundary })
    }

    pub fn operator(&self) -> Result<RadialHamiltonian, ConfigError> {
        let grid = RadialGrid::new(self.grid.dr, self.grid.n)?;
        Ok(RadialHamiltonian::new(self.setup()?, grid)?)
    }

    pub fn initial_state(&self) -> Result<MiniFockState, ConfigError> {
        let op = self.operator()?;
        let state = match self.initial {
            InitialState::Vacuum => MiniFockState::vacuum(&op.grid, op.layout),
            InitialState::Gaussian { center, width, plus, minus } => {
                if !(width > 0.0 && center.is_finite()) || c(plus).norm() + c(minus).norm() == 0.0 {
                    return Err(ConfigError::Invalid { name: "initial", value: format!("{:?}", self.initial) });
                }
                MiniFockState::gaussian(&op, center, width, (c(plus), c(minus)))
            }
            InitialState::BoundaryProfile { c_minus, c_plus, width } => {
                if !(width > 0.0) || c(c_minus).norm() + c(c_plus).norm() == 0.0 {
                    return Err(ConfigError::Invalid { name: "initial", value: format!("{:?}", self.initial) });
                }
                MiniFockState::boundary_profile(&op, c(c_minus), c(c_plus), width)
            }
        };
        Ok(state)
    }

    pub fn process_params(&self) -> Result<ProcessParams, ConfigError> {
        let steps = self.stepper.steps;
        let k = self.process.checkpoints;
        let mut checkpoints: Vec<usize> = (0..=k).map(|i| i * steps / k).collect();
        checkpoints.dedup();
        Ok(ProcessParams {
            walkers: self.process.walkers,
            seed: self.process.seed,
            dt: self.stepper.dt,
            steps,
            checkpoints,
            handoff: self.process.handoff,
            bins: self.process.bins,
            record_samples: self.process.record_samples,
            ..Default::default()
        })
    }
}
