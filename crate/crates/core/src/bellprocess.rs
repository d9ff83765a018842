//! The Bohm–Bell jump process on `{∅} ∪ Σ`: Born-distributed initialization, Bohmian
//! motion between jumps, absorption at the singularity, emission at the boundary-flux rate,
//! and Monte-Carlo checks of equivariance.
//!
//! Walkers are advanced in lockstep with the Cayley evolution of one coupled sector. Each
//! walker owns a ChaCha stream keyed by `(seed, walker id)`, so records are reproducible
//! independently of the thread count.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::{
    asymptotic_coeffs, integrate_trajectory, BohmError, ConfigPoint, FieldSnapshot, LinearInTime,
    TrajectoryEnd, TrajectoryOptions, VelocitySource,
};
use crate::geometry::{GeometryError, TortoiseMap};
use crate::radial::{CayleyStepper, MiniFockState, RadialError, RadialHamiltonian};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProcessError {
    #[error(transparent)]
    Bohm(#[from] BohmError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("radial evolution: {0}")]
    Radial(String),
    #[error("state is not normalized: total probability {0}")]
    Unnormalized(f64),
    #[error("jump rate undefined: Ψ⁰ = 0")]
    UndefinedRate,
    #[error("boundary mass {mass:e} near R_max at t = {t} exceeds {tol:e}")]
    BoundaryMass { mass: f64, t: f64, tol: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

impl From<RadialError> for ProcessError {
    fn from(e: RadialError) -> Self {
        Self::Radial(e.to_string())
    }
}

/// A point of the configuration space `{∅} ∪ Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sector", rename_all = "lowercase")]
pub enum Configuration {
    Vacuum,
    Particle(ConfigPoint),
}

/// Total emission rate `σ = 2·max(0, −Im c₋*c₊)/|Ψ⁰|²`.
pub fn jump_rate(
    c_minus: Complex64,
    c_plus: Complex64,
    psi0: Complex64,
) -> Result<f64, ProcessError> {
    let flux = (-(c_minus.conj() * c_plus).im).max(0.0);
    let p0 = psi0.norm_sqr();
    if p0 == 0.0 {
        return if flux == 0.0 {
            Ok(0.0)
        } else {
            Err(ProcessError::UndefinedRate)
        };
    }
    Ok(2.0 * flux / p0)
}

/// Uniformly distributed direction `(θ, φ)` on the sphere.
pub fn uniform_direction<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    ((1.0 - 2.0 * u).clamp(-1.0, 1.0).acos(), 2.0 * PI * v)
}

/// Born law of a one-sector state: `P(∅) = |Ψ⁰|²` and radial density `|φ₊|² + |φ₋|²` in `R`,
/// tabulated on a fine uniform grid and sampled by exact inversion of the piecewise-linear CDF.
#[derive(Debug, Clone)]
pub struct BornSampler {
    pub p_vacuum: f64,
    map: TortoiseMap,
    x: Vec<f64>,
    dens: Vec<f64>,
    cdf: Vec<f64>,
}

impl BornSampler {
    /// Tabulate from a field snapshot with `refine` table points per grid spacing. The
    /// particle-sector mass is set to the snapshot's discrete 1-particle norm, so that
    /// `P(∅) = |Ψ⁰|²` and the table together carry the state's total probability.
    pub fn new(snap: &FieldSnapshot, dr: f64, refine: usize) -> Result<Self, ProcessError> {
        let n = ((snap.r_max() / dr).round() as usize * refine.max(1)).max(2);
        let h = snap.r_max() / n as f64;
        let x: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
        let mut dens = Vec::with_capacity(n + 1);
        // At R = 0 the gauge exponent vanishes and φ± take the boundary values c±.
        let (cm, cp) = snap.boundary;
        dens.push(cm.norm_sqr() + cp.norm_sqr());
        for &big_r in &x[1..] {
            dens.push(snap.radial_density(big_r)?);
        }
        let table: f64 = (1..x.len()).map(|k| 0.5 * (dens[k] + dens[k - 1]) * h).sum();
        let target = snap.particle_norm.unwrap_or(table);
        if !((table - target).abs() < 0.05) {
            return Err(ProcessError::Unnormalized(snap.psi0.norm_sqr() + table));
        }
        let scale = if table > 0.0 { target / table } else { 0.0 };
        dens.iter_mut().for_each(|d| *d *= scale);
        Self::from_table(snap.psi0.norm_sqr(), snap.tortoise().clone(), x, dens)
    }

    /// Build from a tabulated radial density; the particle-sector mass is taken from the table.
    pub fn from_table(
        p_vacuum: f64,
        map: TortoiseMap,
        x: Vec<f64>,
        dens: Vec<f64>,
    ) -> Result<Self, ProcessError> {
        let mut cdf = vec![0.0; x.len()];
        for k in 1..x.len() {
            cdf[k] = cdf[k - 1] + 0.5 * (dens[k] + dens[k - 1]) * (x[k] - x[k - 1]);
        }
        let total = p_vacuum + cdf[x.len() - 1];
        if !((total - 1.0).abs() < 1e-6) {
            return Err(ProcessError::Unnormalized(total));
        }
        Ok(Self {
            p_vacuum,
            map,
            x,
            dens,
            cdf,
        })
    }

    /// Particle-sector mass of the table (`≈ 1 − P(∅)`).
    pub fn particle_mass(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    /// Inverse CDF in `R` for `u ∈ [0, 1]` of the particle sector.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.particle_mass();
        let k = self
            .cdf
            .partition_point(|&c| c < target)
            .clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let (d0, d1) = (self.dens[k - 1], self.dens[k]);
        let h = x1 - x0;
        let need = target - self.cdf[k - 1];
        // Solve d0·s + (d1 − d0)s²/(2h) = need for s ∈ [0, h].
        let a = 0.5 * (d1 - d0) / h;
        let s = if a.abs() < 1e-14 * (d0 + d1 + 1e-300) / h {
            if d0 > 0.0 {
                need / d0
            } else {
                0.5 * h
            }
        } else {
            let disc = (d0 * d0 + 4.0 * a * need).max(0.0);
            2.0 * need / (d0 + disc.sqrt())
        };
        x0 + s.clamp(0.0, h)
    }

    /// Particle-sector Born mass in `[R_a, R_b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.cdf_at(b) - self.cdf_at(a)
    }

    fn cdf_at(&self, big_r: f64) -> f64 {
        if big_r <= 0.0 {
            return 0.0;
        }
        let k = self
            .x
            .partition_point(|&v| v < big_r)
            .clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let s = (big_r.min(x1) - x0).max(0.0);
        let slope = (self.dens[k] - self.dens[k - 1]) / (x1 - x0);
        self.cdf[k - 1] + self.dens[k - 1] * s + 0.5 * slope * s * s
    }

    /// Edges of `n` particle-sector bins of equal Born probability.
    pub fn quantile_edges(&self, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| {
                if i == n {
                    f64::INFINITY
                } else {
                    self.quantile(i as f64 / n as f64)
                }
            })
            .collect()
    }

    /// Draw a configuration: `∅` with probability `P(∅)`, otherwise `R` by inversion and a
    /// uniform direction (the angular density of a `|κ| = 1` sector is `1/4π`).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Configuration, ProcessError> {
        let total = self.p_vacuum + self.particle_mass();
        let u: f64 = rng.random::<f64>() * total;
        if u < self.p_vacuum {
            return Ok(Configuration::Vacuum);
        }
        let big_r = self.quantile(rng.random());
        let r = self.map.inverse(big_r.max(1e-300))?;
        let (theta, phi) = uniform_direction(rng);
        Ok(Configuration::Particle(ConfigPoint { r, theta, phi }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Absorption,
    Emission,
}

/// A jump: absorption into or emission from the singularity, in direction `(θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub walker: u64,
    pub theta: f64,
    pub phi: f64,
}

/// Configuration of one walker at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub walker: u64,
    pub configuration: Configuration,
}

/// Seed, time-ordered event log and optional checkpoint samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessRecord {
    pub seed: u64,
    pub events: Vec<Event>,
    pub samples: Vec<Sample>,
}

impl ProcessRecord {
    /// Line-delimited JSON: one header line, then event and sample records.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{}",
            serde_json::json!({ "record": "header", "seed": self.seed })
        )?;
        for e in &self.events {
            writeln!(
                w,
                "{}",
                serde_json::json!({ "record": "event", "t": e.t, "kind": e.kind, "walker": e.walker, "theta": e.theta, "phi": e.phi })
            )?;
        }
        for s in &self.samples {
            let mut v = serde_json::to_value(s).map_err(std::io::Error::other)?;
            v["record"] = "sample".into();
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub walkers: usize,
    pub seed: u64,
    /// Wave-function time step.
    pub dt: f64,
    pub steps: usize,
    /// Step indices (0..=steps) at which equivariance is checked.
    pub checkpoints: Vec<usize>,
    /// Hand-off radius in units of `|Q|`.
    pub handoff: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Particle-sector bins of equal Born probability.
    pub bins: usize,
    /// Table points per grid spacing for the Born law.
    pub refine: usize,
    /// Thinning sub-steps are refined until `σ·dt ≤ max_rate_dt`.
    pub max_rate_dt: f64,
    /// Abort when the probability beyond `0.9·R_max` exceeds this.
    pub boundary_tol: f64,
    pub record_samples: bool,
}

impl Default for ProcessParams {
    fn default() -> Self {
        Self {
            walkers: 10_000,
            seed: 1,
            dt: 0.01,
            steps: 100,
            checkpoints: vec![0, 100],
            handoff: 1e-3,
            rtol: 1e-7,
            atol: 1e-12,
            bins: 40,
            refine: 4,
            max_rate_dt: 0.1,
            boundary_tol: 1e-6,
            record_samples: false,
        }
    }
}

impl ProcessParams {
    pub fn validate(&self) -> Result<(), ProcessError> {
        let bad = |name, value: f64| Err(ProcessError::InvalidParameter { name, value });
        if self.walkers == 0 {
            return bad("walkers", 0.0);
        }
        if !(self.dt > 0.0) {
            return bad("dt", self.dt);
        }
        if !(self.handoff > 0.0 && self.handoff < 1.0) {
            return bad("handoff", self.handoff);
        }
        if self.bins < 2 {
            return bad("bins", self.bins as f64);
        }
        if !(self.max_rate_dt > 0.0) {
            return bad("max_rate_dt", self.max_rate_dt);
        }
        if let Some(&c) = self.checkpoints.iter().find(|&&c| c > self.steps) {
            return bad("checkpoint", c as f64);
        }
        Ok(())
    }
}

/// Empirical vs Born law at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub step: usize,
    pub t: f64,
    pub walkers: usize,
    pub vacuum_count: usize,
    pub p_vacuum_born: f64,
    pub p_vacuum_empirical: f64,
    /// Binomial z-score of the vacuum occupation.
    pub z_vacuum: f64,
    /// Total-variation distance over `{∅} ∪` radial bins.
    pub tv: f64,
    /// Expected TV under pure sampling noise and its standard deviation.
    pub tv_expected: f64,
    pub tv_sigma: f64,
    pub chi2: f64,
    pub dof: usize,
    pub particle_norm: f64,
    pub boundary_mass: f64,
}

impl CheckpointReport {
    pub fn tv_bound(&self) -> f64 {
        self.tv_expected + 3.0 * self.tv_sigma
    }
    pub fn passed(&self) -> bool {
        self.tv <= self.tv_bound() && self.z_vacuum.abs() <= 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub checkpoints: Vec<CheckpointReport>,
    pub absorptions: usize,
    pub emissions: usize,
    /// Walkers whose trajectory integration failed (excluded from the statistics).
    pub lost_walkers: usize,
    /// Steps in which a walker sat at `∅` while `Ψ⁰ = 0` with nonzero outgoing flux.
    pub undefined_rate_events: usize,
    /// `|Ψ⁰(t)|²` at every step (including `t = 0`).
    pub vacuum_born: Vec<f64>,
    /// Empirical `P(∅)` at every step.
    pub vacuum_empirical: Vec<f64>,
}

impl EquivarianceReport {
    pub fn passed(&self) -> bool {
        self.lost_walkers == 0 && self.checkpoints.iter().all(CheckpointReport::passed)
    }
}

/// Compare walker configurations with the Born law of `sampler`.
pub fn compare_with_born(
    configs: &[Configuration],
    sampler: &BornSampler,
    bins: usize,
) -> Result<(usize, f64, f64, f64, f64, f64, usize), ProcessError> {
    let n = configs.len() as f64;
    let p0 = sampler.p_vacuum / (sampler.p_vacuum + sampler.particle_mass());
    let edges = sampler.quantile_edges(bins);
    let map = &sampler.map;
    let mut counts = vec![0usize; bins + 1];
    for c in configs {
        match c {
            Configuration::Vacuum => counts[0] += 1,
            Configuration::Particle(p) => {
                let big_r = map.tortoise(p.r);
                let k = edges.partition_point(|&e| e <= big_r).clamp(1, bins);
                counts[k] += 1;
            }
        }
    }
    let mut probs = vec![p0];
    probs.extend(std::iter::repeat_n((1.0 - p0) / bins as f64, bins));
    let mut tv = 0.0;
    let mut tv_expected = 0.0;
    let mut tv_var = 0.0;
    let mut chi2 = 0.0;
    let mut cats = 0;
    for (k, &p) in probs.iter().enumerate() {
        let ph = counts[k] as f64 / n;
        tv += 0.5 * (ph - p).abs();
        let v = p * (1.0 - p) / n;
        tv_expected += 0.5 * (2.0 * v / PI).sqrt();
        tv_var += 0.25 * (1.0 - 2.0 / PI) * v;
        if p > 0.0 {
            chi2 += (counts[k] as f64 - n * p).powi(2) / (n * p);
            cats += 1;
        } else if counts[k] > 0 {
            chi2 = f64::INFINITY;
        }
    }
    let z = if p0 > 0.0 && p0 < 1.0 {
        (counts[0] as f64 / n - p0) / (p0 * (1.0 - p0) / n).sqrt()
    } else if (counts[0] as f64 / n - p0).abs() == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((
        counts[0],
        z,
        tv,
        tv_expected,
        tv_var.sqrt(),
        chi2,
        cats.max(1) - 1,
    ))
}

/// Linear-in-time rate model on one wave-function step.
#[derive(Debug, Clone, Copy)]
pub struct RateModel {
    pub t0: f64,
    pub t1: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl RateModel {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        let w = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        self.sigma0 + (self.sigma1 - self.sigma0) * w
    }
}

/// First emission time in `[t, model.t1)` by thinning against the sub-step majorant
/// `max(σ(a), σ(b))` (exact for a linear rate); sub-steps satisfy `σ·h ≤ max_rate_dt`.
pub fn next_emission<R: Rng>(
    model: &RateModel,
    t: f64,
    max_rate_dt: f64,
    rng: &mut R,
) -> Option<f64> {
    let span = model.t1 - model.t0;
    let peak = model.sigma0.max(model.sigma1);
    if peak <= 0.0 || t >= model.t1 {
        return None;
    }
    let pieces = ((peak * span / max_rate_dt).ceil() as usize).max(1);
    let h = span / pieces as f64;
    let first = (((t - model.t0) / h).floor() as usize).min(pieces - 1);
    for j in first..pieces {
        let a = (model.t0 + j as f64 * h).max(t);
        let b = if j + 1 == pieces {
            model.t1
        } else {
            model.t0 + (j + 1) as f64 * h
        };
        let lam = model.at(a).max(model.at(b));
        if lam <= 0.0 {
            continue;
        }
        let mut s = a;
        loop {
            let e: f64 = rng.random::<f64>();
            s += -(1.0 - e).ln() / lam;
            if s >= b {
                break;
            }
            if rng.random::<f64>() * lam < model.at(s) {
                return Some(s);
            }
        }
    }
    None
}

/// One walker of the process.
#[derive(Debug, Clone)]
pub struct Walker {
    pub id: u64,
    pub config: Configuration,
    pub rng: ChaCha8Rng,
    pub lost: bool,
    /// Step size carried over between wave-function steps (0: use the default).
    pub h: f64,
}

impl Walker {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self {
            id,
            config: Configuration::Vacuum,
            rng,
            lost: false,
            h: 0.0,
        }
    }
}

/// Shared per-step context for walker advancement.
pub struct StepContext<'a> {
    pub src: &'a dyn VelocitySource,
    pub rate: RateModel,
    pub opts: TrajectoryOptions,
    pub max_rate_dt: f64,
}

/// Advance a walker from `ctx.rate.t0` to `ctx.rate.t1`, appending its jumps to `events`.
/// Returns `true` if the rate was needed while undefined (walker at `∅` with `Ψ⁰ = 0`).
pub fn advance_walker(w: &mut Walker, ctx: &StepContext<'_>, events: &mut Vec<Event>) -> bool {
    let metric = *ctx.src.metric();
    let sector = ctx.src.sector();
    let r_h = ctx.opts.r_min;
    let t1 = ctx.rate.t1;
    let mut t = ctx.rate.t0;
    let mut undefined = false;
    if w.lost {
        return false;
    }
    loop {
        match w.config {
            Configuration::Particle(p) => {
                let opts = if w.h > 0.0 {
                    TrajectoryOptions {
                        h_init: w.h,
                        ..ctx.opts
                    }
                } else {
                    ctx.opts
                };
                match integrate_trajectory(ctx.src, p, t, t1, &opts) {
                    Ok(res) => match res.end {
                        TrajectoryEnd::Completed => {
                            w.h = res.h_next;
                            w.config = Configuration::Particle(res.point.wrapped());
                            return undefined;
                        }
                        TrajectoryEnd::Absorbed {
                            t_event, phi_hit, ..
                        } => {
                            events.push(Event {
                                t: t_event,
                                kind: EventKind::Absorption,
                                walker: w.id,
                                theta: res.point.theta,
                                phi: phi_hit.rem_euclid(2.0 * PI),
                            });
                            w.config = Configuration::Vacuum;
                            w.h = 0.0;
                            t = t_event;
                        }
                    },
                    Err(_) => {
                        w.lost = true;
                        return undefined;
                    }
                }
            }
            Configuration::Vacuum => {
                if ctx.rate.sigma0.is_nan() || ctx.rate.sigma1.is_nan() {
                    undefined = true;
                }
                let rate = RateModel {
                    sigma0: nan_to_zero(ctx.rate.sigma0),
                    sigma1: nan_to_zero(ctx.rate.sigma1),
                    ..ctx.rate
                };
                let Some(tau) = next_emission(&rate, t, ctx.max_rate_dt, &mut w.rng) else {
                    return undefined;
                };
                let (theta, phi_dir) = uniform_direction(&mut w.rng);
                events.push(Event {
                    t: tau,
                    kind: EventKind::Emission,
                    walker: w.id,
                    theta,
                    phi: phi_dir,
                });
                let (cm, cp) = ctx.src.boundary(tau);
                let (slope, speed) = match asymptotic_coeffs(cm, cp, &metric, sector) {
                    Ok(c) => (c.phi_slope, c.big_r_speed),
                    Err(_) => (0.0, f64::INFINITY),
                };
                // The outgoing asymptote reaches r_h after δ = R(r_h)/|dR/dt|.
                let delta = crate::geometry::tortoise(r_h, &metric)
                    .map(|big_r| big_r / speed)
                    .unwrap_or(0.0);
                let point = ConfigPoint {
                    r: r_h * (1.0 + 1e-9),
                    theta,
                    phi: phi_dir + slope * r_h,
                };
                w.config = Configuration::Particle(point);
                t = tau + delta;
                if t >= t1 {
                    return undefined;
                }
            }
        }
    }
}

fn nan_to_zero(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x
    }
}

fn snapshot_rate(snap: &FieldSnapshot) -> f64 {
    let (cm, cp) = snap.boundary;
    jump_rate(cm, cp, snap.psi0).unwrap_or(f64::NAN)
}

/// Co-evolve the wave function of one `|κ| = 1` sector and `N` walkers, checking the
/// empirical configuration law against the Born law at the requested steps.
pub fn equivariance_test(
    op: &RadialHamiltonian,
    state0: &MiniFockState,
    params: &ProcessParams,
) -> Result<(ProcessRecord, EquivarianceReport), ProcessError> {
    params.validate()?;
    if op.setup.kappa.abs() != 1 {
        return Err(BohmError::KappaNotUnit(op.setup.kappa).into());
    }
    let grid = op.grid;
    let norm = state0.total_norm(&grid);
    if !((norm - 1.0).abs() < 1e-8) {
        return Err(ProcessError::Unnormalized(norm));
    }
    let q = op.setup.metric.abs_charge();
    let opts = TrajectoryOptions {
        rtol: params.rtol,
        atol: params.atol,
        r_min: params.handoff * q,
        h_init: params.dt * 1e-3,
        max_steps: 1_000_000,
        record: false,
    };
    let stepper = CayleyStepper::new(op, params.dt)?;
    let mut y = state0.to_scaled(&grid);
    let mut snap0 = FieldSnapshot::from_state(state0, op)?;
    let sampler0 = BornSampler::new(&snap0, grid.dr, params.refine)?;

    let mut walkers: Vec<Walker> = (0..params.walkers as u64)
        .map(|id| Walker::new(params.seed, id))
        .collect();
    walkers
        .par_iter_mut()
        .try_for_each(|w| -> Result<(), ProcessError> {
            w.config = sampler0.sample(&mut w.rng)?;
            Ok(())
        })?;

    let mut record = ProcessRecord {
        seed: params.seed,
        ..Default::default()
    };
    let mut report = EquivarianceReport {
        checkpoints: Vec::new(),
        absorptions: 0,
        emissions: 0,
        lost_walkers: 0,
        undefined_rate_events: 0,
        vacuum_born: vec![state0.psi0.norm_sqr()],
        vacuum_empirical: vec![vacuum_fraction(&walkers)],
    };
    let checkpoint = |step: usize,
                      t: f64,
                      state: &MiniFockState,
                      sampler: &BornSampler,
                      walkers: &[Walker],
                      record: &mut ProcessRecord|
     -> Result<CheckpointReport, ProcessError> {
        let configs: Vec<Configuration> = walkers
            .iter()
            .filter(|w| !w.lost)
            .map(|w| w.config)
            .collect();
        let (vacuum_count, z, tv, tv_expected, tv_sigma, chi2, dof) =
            compare_with_born(&configs, sampler, params.bins)?;
        if params.record_samples {
            record.samples.extend(walkers.iter().map(|w| Sample {
                t,
                walker: w.id,
                configuration: w.config,
            }));
        }
        Ok(CheckpointReport {
            step,
            t,
            walkers: configs.len(),
            vacuum_count,
            p_vacuum_born: sampler.p_vacuum,
            p_vacuum_empirical: vacuum_count as f64 / configs.len().max(1) as f64,
            z_vacuum: z,
            tv,
            tv_expected,
            tv_sigma,
            chi2,
            dof,
            particle_norm: state.particle_norm(&grid),
            boundary_mass: state.boundary_mass(&grid, 0.9),
        })
    };
    if params.checkpoints.contains(&0) {
        let c = checkpoint(0, 0.0, state0, &sampler0, &walkers, &mut record)?;
        report.checkpoints.push(c);
    }
    for step in 1..=params.steps {
        let t0 = (step - 1) as f64 * params.dt;
        let t1 = step as f64 * params.dt;
        stepper.step(&mut y);
        let state1 = MiniFockState::from_scaled(&y, &grid, op.layout);
        let bm = state1.boundary_mass(&grid, 0.9);
        if bm > params.boundary_tol {
            return Err(ProcessError::BoundaryMass {
                mass: bm,
                t: t1,
                tol: params.boundary_tol,
            });
        }
        let snap1 = FieldSnapshot::from_state(&state1, op)?;
        let src = LinearInTime {
            a: &snap0,
            b: &snap1,
            t0,
            t1,
        };
        let ctx = StepContext {
            src: &src,
            rate: RateModel {
                t0,
                t1,
                sigma0: snapshot_rate(&snap0),
                sigma1: snapshot_rate(&snap1),
            },
            opts,
            max_rate_dt: params.max_rate_dt,
        };
        let results: Vec<(Vec<Event>, bool)> = walkers
            .par_iter_mut()
            .map(|w| {
                let mut ev = Vec::new();
                let undefined = advance_walker(w, &ctx, &mut ev);
                (ev, undefined)
            })
            .collect();
        let mut step_events: Vec<Event> = Vec::new();
        for (ev, undefined) in results {
            step_events.extend(ev);
            report.undefined_rate_events += undefined as usize;
        }
        step_events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.walker.cmp(&b.walker)));
        record.events.extend(step_events);
        report.vacuum_born.push(state1.psi0.norm_sqr());
        report.vacuum_empirical.push(vacuum_fraction(&walkers));
        if params.checkpoints.contains(&step) {
            let sampler = BornSampler::new(&snap1, grid.dr, params.refine)?;
            let c = checkpoint(step, t1, &state1, &sampler, &walkers, &mut record)?;
            report.checkpoints.push(c);
        }
        snap0 = snap1;
    }
    report.absorptions = record.count(EventKind::Absorption);
    report.emissions = record.count(EventKind::Emission);
    report.lost_walkers = walkers.iter().filter(|w| w.lost).count();
    Ok((record, report))
}

fn vacuum_fraction(walkers: &[Walker]) -> f64 {
    walkers
        .iter()
        .filter(|w| matches!(w.config, Configuration::Vacuum))
        .count() as f64
        / walkers.len() as f64
}

/// Holding-time statistics at `∅` under constant boundary data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldingTimeReport {
    pub rate: f64,
    pub rate_mle: f64,
    /// Standard error of the estimate, `rate/√N`.
    pub sigma: f64,
    pub samples: usize,
}

impl HoldingTimeReport {
    pub fn z(&self) -> f64 {
        (self.rate_mle - self.rate) / self.sigma
    }
}

/// Run `n` walkers from `∅` through the process stepping with a frozen source until their
/// first emission, and fit the exponential holding-time rate by maximum likelihood.
pub fn holding_time_fit(
    src: &dyn VelocitySource,
    psi0: Complex64,
    n: usize,
    dt: f64,
    seed: u64,
    handoff: f64,
) -> Result<HoldingTimeReport, ProcessError> {
    let (cm, cp) = src.boundary(0.0);
    let rate = jump_rate(cm, cp, psi0)?;
    if rate <= 0.0 {
        return Err(ProcessError::InvalidParameter {
            name: "rate",
            value: rate,
        });
    }
    let opts = TrajectoryOptions {
        r_min: handoff * src.metric().abs_charge(),
        record: false,
        h_init: dt * 1e-3,
        ..Default::default()
    };
    let horizon = 60.0 / rate;
    let times: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut w = Walker::new(seed, id);
            let mut events = Vec::new();
            let mut t0 = 0.0;
            while t0 < horizon {
                let ctx = StepContext {
                    src,
                    rate: RateModel {
                        t0,
                        t1: t0 + dt,
                        sigma0: rate,
                        sigma1: rate,
                    },
                    opts,
                    max_rate_dt: 0.1,
                };
                advance_walker(&mut w, &ctx, &mut events);
                if let Some(e) = events.iter().find(|e| e.kind == EventKind::Emission) {
                    return e.t;
                }
                t0 += dt;
            }
            horizon
        })
        .collect();
    let total: f64 = times.iter().sum();
    let rate_mle = n as f64 / total;
    Ok(HoldingTimeReport {
        rate,
        rate_mle,
        sigma: rate / (n as f64).sqrt(),
        samples: n,
    })
}

/// Kolmogorov–Smirnov statistics `√n·D` of emission `cos θ` and `φ` against uniform laws.
pub fn emission_ks(events: &[Event]) -> (f64, f64, usize) {
    let mut cos: Vec<f64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Emission)
        .map(|e| 0.5 * (1.0 + e.theta.cos()))
        .collect();
    let mut phi: Vec<f64> = events
        .iter()
        .filter(|e| e.kind == EventKind::Emission)
        .map(|e| e.phi.rem_euclid(2.0 * PI) / (2.0 * PI))
        .collect();
    let n = cos.len();
    (ks_uniform(&mut cos), ks_uniform(&mut phi), n)
}

fn ks_uniform(u: &mut [f64]) -> f64 {
    let n = u.len();
    if n == 0 {
        return 0.0;
    }
    u.sort_by(f64::total_cmp);
    let mut d: f64 = 0.0;
    for (i, &x) in u.iter().enumerate() {
        d = d
            .max((i + 1) as f64 / n as f64 - x)
            .max(x - i as f64 / n as f64);
    }
    d * (n as f64).sqrt()
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sided 3σ Gaussian tail probability.
pub const THREE_SIGMA_TAIL: f64 = 0.002_699_796_063_260_207;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let c = |re, im| Complex64::new(re, im);
        assert_eq!(
            jump_rate(c(1.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)).unwrap(),
            0.0
        );
        assert_eq!(
            jump_rate(c(1.0, 0.0), c(0.0, -1.0), c(1.0, 0.0)).unwrap(),
            2.0
        );
        assert!(matches!(
            jump_rate(c(1.0, 0.0), c(0.0, -1.0), c(0.0, 0.0)),
            Err(ProcessError::UndefinedRate)
        ));
        assert_eq!(
            jump_rate(c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn kolmogorov_three_sigma_point() {
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
        assert!(kolmogorov_survival(1.82) < THREE_SIGMA_TAIL);
    }

    #[test]
    fn thinning_constant_rate_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = RateModel {
            t0: 0.0,
            t1: 100.0,
            sigma0: 2.0,
            sigma1: 2.0,
        };
        let n = 20000;
        let mean: f64 = (0..n)
            .map(|_| next_emission(&model, 0.0, 0.1, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }
}
