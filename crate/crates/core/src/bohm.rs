//! Bohmian motion in the sRN chart: the probability current of a one-sector state,
//! the coordinate velocity field `(dr/dt, dθ/dt, dφ/dt)`, adaptive trajectory integration
//! with a closed-form hand-off near the singularity, and the short-distance asymptotics.
//!
//! Fields between grid nodes are interpolated in the gauge `ψ₊ = e^{η}φ₊`, `ψ₋ = e^{−η}φ₋`
//! (smooth up to `R = 0`, where they take the boundary values `c±`).

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, MetricParams, TortoiseMap};
use crate::numerics::{linear_fit, ComplexPchip};
use crate::radial::{Layout, MiniFockState, RadialHamiltonian};
use crate::spinors::{self, AngularSector, Parity, SpinorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BohmError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spinor(#[from] SpinorError),
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("in-sector formulas need kappa = ±1, got {0}")]
    KappaNotUnit(i32),
    #[error("density vanishes at r = {r}; velocity undefined")]
    ZeroDensity { r: f64 },
    #[error("Im(c₋* c₊) = 0: no flux through the singularity")]
    NoFlux,
    #[error("step size underflow at t = {t}, r = {r}")]
    StepUnderflow { t: f64, r: f64 },
    #[error("fit window contains {0} samples; need at least 5")]
    FitWindow(usize),
}

/// A point `(r, θ, φ)` of the spatial slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl ConfigPoint {
    /// `φ` wrapped into `[0, 2π)`.
    pub fn wrapped(self) -> Self {
        Self {
            phi: self.phi.rem_euclid(2.0 * PI),
            ..self
        }
    }
}

/// Coordinate velocities `(dr/dt, dθ/dt, dφ/dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
}

/// Interpolated radial wave function of one sector at a fixed time.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub metric: MetricParams,
    pub sector: AngularSector,
    map: TortoiseMap,
    plus: ComplexPchip,
    minus: ComplexPchip,
    r_max: f64,
    /// `(c₋, c₊)` at `R = 0`.
    pub boundary: (Complex64, Complex64),
    pub psi0: Complex64,
    /// Discrete 1-particle norm of the source state, if built from a grid state.
    pub particle_norm: Option<f64>,
}

impl FieldSnapshot {
    /// Build from a grid state, using the operator's boundary closure for the `R = 0` knot.
    pub fn from_state(state: &MiniFockState, op: &RadialHamiltonian) -> Result<Self, BohmError> {
        let grid = &op.grid;
        let sector = AngularSector::new(op.setup.twice_mj, op.setup.kappa)?;
        let (cm, cp) = op.scheme_boundary(state);
        let half_eta: Vec<f64> = op.terms.half.iter().map(|t| t.eta).collect();
        let whole_eta: Vec<f64> = op.terms.whole.iter().map(|t| t.eta).collect();
        let half_x: Vec<f64> = std::iter::once(0.0)
            .chain((0..grid.n).map(|k| grid.half_node(k)))
            .collect();
        let whole_x: Vec<f64> = std::iter::once(0.0)
            .chain((0..grid.n).map(|k| grid.whole_node(k)))
            .collect();
        // Gauge: ψ₊ = e^{η}φ₊, ψ₋ = e^{−η}φ₋.
        let (plus, minus) = match state.layout {
            Layout::MinusOnWhole => {
                let p: Vec<Complex64> = std::iter::once(cp)
                    .chain(state.half.iter().zip(&half_eta).map(|(v, e)| v * e.exp()))
                    .collect();
                let m: Vec<Complex64> = std::iter::once(cm)
                    .chain(
                        state
                            .whole
                            .iter()
                            .zip(&whole_eta)
                            .map(|(v, e)| v * (-e).exp()),
                    )
                    .chain(std::iter::once(Complex64::new(0.0, 0.0)))
                    .collect();
                (
                    ComplexPchip::new(half_x, &p),
                    ComplexPchip::new(whole_x, &m),
                )
            }
            Layout::PlusOnWhole => {
                let m: Vec<Complex64> = std::iter::once(cm)
                    .chain(
                        state
                            .half
                            .iter()
                            .zip(&half_eta)
                            .map(|(v, e)| v * (-e).exp()),
                    )
                    .collect();
                let p: Vec<Complex64> = std::iter::once(cp)
                    .chain(state.whole.iter().zip(&whole_eta).map(|(v, e)| v * e.exp()))
                    .chain(std::iter::once(Complex64::new(0.0, 0.0)))
                    .collect();
                (
                    ComplexPchip::new(whole_x, &p),
                    ComplexPchip::new(half_x, &m),
                )
            }
        };
        Ok(Self {
            metric: op.setup.metric,
            sector,
            map: TortoiseMap::new(op.setup.metric)?,
            plus,
            minus,
            r_max: grid.r_max(),
            boundary: (cm, cp),
            psi0: state.psi0,
            particle_norm: Some(state.particle_norm(grid)),
        })
    }

    /// The exact local solution `φ₊ = c₊e^{−η}`, `φ₋ = c₋e^{η}` on `[0, r_max]` (`m = q = 0`
    /// near-boundary profile), useful for engineered boundary data.
    pub fn local_solution(
        metric: MetricParams,
        sector: AngularSector,
        c_minus: Complex64,
        c_plus: Complex64,
        psi0: Complex64,
        r_max: f64,
    ) -> Result<Self, BohmError> {
        let x = vec![0.0, r_max];
        Ok(Self {
            metric,
            sector,
            map: TortoiseMap::new(metric)?,
            plus: ComplexPchip::new(x.clone(), &[c_plus, c_plus]),
            minus: ComplexPchip::new(x, &[c_minus, c_minus]),
            r_max,
            boundary: (c_minus, c_plus),
            psi0,
            particle_norm: None,
        })
    }

    pub fn tortoise(&self) -> &TortoiseMap {
        &self.map
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Gauge-transformed fields `(ψ₊, ψ₋)` at tortoise coordinate `R`.
    #[inline]
    pub fn gauge_fields(&self, big_r: f64) -> (Complex64, Complex64) {
        (self.plus.eval(big_r), self.minus.eval(big_r))
    }

    /// `(φ₊, φ₋)` at radius `r`; zero beyond the wall.
    pub fn fields(&self, r: f64) -> (Complex64, Complex64) {
        let big_r = self.map.tortoise(r);
        if !(big_r <= self.r_max) {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let (p, m) = self.gauge_fields(big_r);
        let eta = self.sector.kappa as f64 * self.metric.log_factor(r);
        (p * (-eta).exp(), m * eta.exp())
    }

    /// `|φ₊|² + |φ₋|²` at tortoise coordinate `R` (the radial Born density per unit `R`).
    pub fn radial_density(&self, big_r: f64) -> Result<f64, BohmError> {
        let r = self.map.inverse(big_r)?;
        let (p, m) = self.fields(r);
        Ok(p.norm_sqr() + m.norm_sqr())
    }
}

/// A (possibly time-dependent) source of `(φ₊, φ₋)` for the velocity field.
pub trait VelocitySource: Sync {
    fn metric(&self) -> &MetricParams;
    fn sector(&self) -> AngularSector;
    /// `(φ₊, φ₋)` at time `t` and radius `r`.
    fn fields(&self, t: f64, r: f64) -> (Complex64, Complex64);
    /// `(c₋, c₊)` at time `t`.
    fn boundary(&self, t: f64) -> (Complex64, Complex64);
}

/// The field frozen at one time.
#[derive(Debug, Clone)]
pub struct FrozenField(pub FieldSnapshot);

impl VelocitySource for FrozenField {
    fn metric(&self) -> &MetricParams {
        &self.0.metric
    }
    fn sector(&self) -> AngularSector {
        self.0.sector
    }
    fn fields(&self, _t: f64, r: f64) -> (Complex64, Complex64) {
        self.0.fields(r)
    }
    fn boundary(&self, _t: f64) -> (Complex64, Complex64) {
        self.0.boundary
    }
}

/// Linear interpolation in time between two snapshots at `t0 < t1`.
#[derive(Debug, Clone, Copy)]
pub struct LinearInTime<'a> {
    pub a: &'a FieldSnapshot,
    pub b: &'a FieldSnapshot,
    pub t0: f64,
    pub t1: f64,
}

impl LinearInTime<'_> {
    #[inline]
    fn weight(&self, t: f64) -> f64 {
        ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0)
    }
}

impl VelocitySource for LinearInTime<'_> {
    fn metric(&self) -> &MetricParams {
        &self.a.metric
    }
    fn sector(&self) -> AngularSector {
        self.a.sector
    }
    fn fields(&self, t: f64, r: f64) -> (Complex64, Complex64) {
        let w = self.weight(t);
        let big_r = self.a.map.tortoise(r);
        if !(big_r <= self.a.r_max) {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let (pa, ma) = self.a.gauge_fields(big_r);
        let (pb, mb) = self.b.gauge_fields(big_r);
        let e = (self.a.sector.kappa as f64 * self.a.metric.log_factor(r)).exp();
        ((pa * (1.0 - w) + pb * w) / e, (ma * (1.0 - w) + mb * w) * e)
    }
    fn boundary(&self, t: f64) -> (Complex64, Complex64) {
        let w = self.weight(t);
        let (am, ap) = self.a.boundary;
        let (bm, bp) = self.b.boundary;
        (am * (1.0 - w) + bm * w, ap * (1.0 - w) + bp * w)
    }
}

fn require_unit_kappa(sector: AngularSector) -> Result<(), BohmError> {
    if sector.kappa.abs() != 1 {
        return Err(BohmError::KappaNotUnit(sector.kappa));
    }
    Ok(())
}

/// Closed-form current `(j⁰, j¹, j², j³)` (frame components) from `(φ₊, φ₋)` at `(r, θ)`.
pub fn current_from_fields(
    metric: &MetricParams,
    sector: AngularSector,
    r: f64,
    theta: f64,
    fp: Complex64,
    fm: Complex64,
) -> Result<[f64; 4], BohmError> {
    require_unit_kappa(sector)?;
    if !(r > 0.0) {
        return Err(BohmError::NonPositiveRadius(r));
    }
    let a = metric.a(r);
    let denom = r * r * a;
    let rho = fp.norm_sqr() + fm.norm_sqr();
    let prod = fp.conj() * fm;
    Ok([
        rho / (4.0 * PI * denom),
        prod.im / (2.0 * PI * denom),
        0.0,
        sector.sign() * theta.sin() * prod.re / (2.0 * PI * denom),
    ])
}

/// The 4-spinor `Ψ¹(r, θ, φ) = (φ₊Φ⁺ + φ₋Φ⁻)/(r A^{1/2})`.
pub fn four_spinor(
    metric: &MetricParams,
    sector: AngularSector,
    point: ConfigPoint,
    fp: Complex64,
    fm: Complex64,
) -> Result<spinors::Spinor4, BohmError> {
    let plus = spinors::phi_basis(sector, Parity::Plus, point.theta, point.phi)?;
    let minus = spinors::phi_basis(sector, Parity::Minus, point.theta, point.phi)?;
    let scale = 1.0 / (point.r * metric.a(point.r).sqrt());
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for i in 0..4 {
        out[i] = (plus[i] * fp + minus[i] * fm) * scale;
    }
    Ok(out)
}

/// Current components at a point of a source at time `t`.
pub fn current_components(
    src: &dyn VelocitySource,
    t: f64,
    point: ConfigPoint,
) -> Result<[f64; 4], BohmError> {
    if !(point.r > 0.0) {
        return Err(BohmError::NonPositiveRadius(point.r));
    }
    let (fp, fm) = src.fields(t, point.r);
    current_from_fields(src.metric(), src.sector(), point.r, point.theta, fp, fm)
}

/// In-sector velocity from `(φ₊, φ₋)` (independent of θ, φ).
#[inline]
pub fn velocity_from_fields(
    metric: &MetricParams,
    sign: f64,
    r: f64,
    fp: Complex64,
    fm: Complex64,
) -> Result<VelocitySample, BohmError> {
    let rho = fp.norm_sqr() + fm.norm_sqr();
    if !(rho > 0.0) {
        return Err(BohmError::ZeroDensity { r });
    }
    let ra = metric.r_a(r);
    let a = ra / r;
    let prod = fp.conj() * fm;
    Ok(VelocitySample {
        v1: 2.0 * a * a * prod.im / rho,
        v2: 0.0,
        v3: 2.0 * a * sign * prod.re / (r * rho),
    })
}

/// Bohmian velocity of a source at time `t`.
pub fn velocity_field(
    src: &dyn VelocitySource,
    t: f64,
    point: ConfigPoint,
) -> Result<VelocitySample, BohmError> {
    require_unit_kappa(src.sector())?;
    if !(point.r > 0.0) {
        return Err(BohmError::NonPositiveRadius(point.r));
    }
    let (fp, fm) = src.fields(t, point.r);
    velocity_from_fields(src.metric(), src.sector().sign(), point.r, fp, fm)
}

/// Short-distance trajectory coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticCoeffs {
    /// `r ≈ C_rad |t − t₀|^{1/3}`.
    pub c_rad: f64,
    /// `φ − φ₀ ≈ C_az sgn(t − t₀) |t − t₀|^{1/3}`.
    pub c_az: f64,
    /// `dφ/dr` at `r = 0`.
    pub phi_slope: f64,
    /// `|dR/dt|` at `R = 0`.
    pub big_r_speed: f64,
    /// `+1`: emission (outgoing), `−1`: absorption (incoming).
    pub direction: f64,
}

/// Coefficients from boundary values; `Im(c₋* c₊) = 0` is rejected.
pub fn asymptotic_coeffs(
    c_minus: Complex64,
    c_plus: Complex64,
    metric: &MetricParams,
    sector: AngularSector,
) -> Result<AsymptoticCoeffs, BohmError> {
    let prod = c_minus.conj() * c_plus;
    let norm = c_minus.norm_sqr() + c_plus.norm_sqr();
    if prod.im == 0.0 || norm == 0.0 {
        return Err(BohmError::NoFlux);
    }
    let q = metric.abs_charge();
    let s = sector.sign();
    let im_abs = prod.im.abs();
    Ok(AsymptoticCoeffs {
        c_rad: (6.0 * q * q * im_abs / norm).cbrt(),
        c_az: s * 6f64.cbrt() * prod.re / (q.cbrt() * norm.cbrt() * im_abs.powf(2.0 / 3.0)),
        phi_slope: -s * prod.re / (q * prod.im),
        big_r_speed: 2.0 * im_abs / norm,
        direction: if prod.im < 0.0 { 1.0 } else { -1.0 },
    })
}

/// One recorded trajectory point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub point: ConfigPoint,
    pub big_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Hand-off radius; below it the closed-form asymptote is used.
    pub r_min: f64,
    pub h_init: f64,
    pub max_steps: usize,
    pub record: bool,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-14,
            r_min: 1e-3,
            h_init: 1e-4,
            max_steps: 1_000_000,
            record: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrajectoryEnd {
    /// Reached the end of the time span.
    Completed,
    /// Crossed `r_min` inwards at `t_event`; the asymptote reaches `r = 0` at `t_hit`
    /// with azimuth `phi_hit`.
    Absorbed {
        t_event: f64,
        t_hit: f64,
        phi_hit: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub samples: Vec<TrajectorySample>,
    pub end: TrajectoryEnd,
    pub t: f64,
    pub point: ConfigPoint,
    pub steps: usize,
    /// Step size proposed for a continuation of the integration.
    pub h_next: f64,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type State3 = [f64; 3];

fn axpy(y: &State3, h: f64, terms: &[(f64, &State3)]) -> State3 {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += h * c * k[i];
        }
    }
    out
}

struct Rhs<'a> {
    src: &'a dyn VelocitySource,
    sign: f64,
}

impl Rhs<'_> {
    /// `None` when the stage left `r > 0` or the density vanished.
    #[inline]
    fn eval(&self, t: f64, y: &State3) -> Option<State3> {
        if !(y[0] > 0.0) {
            return None;
        }
        let (fp, fm) = self.src.fields(t, y[0]);
        let v = velocity_from_fields(self.src.metric(), self.sign, y[0], fp, fm).ok()?;
        Some([v.v1, v.v2, v.v3])
    }
}

/// Integrate `d(r, θ, φ)/dt = v` from `t_start` to `t_end` (either direction) with
/// adaptive Dormand–Prince 5(4). An inward crossing of `r_min` ends the integration with
/// the crossing located by cubic Hermite interpolation and the hit time extrapolated
/// with the local asymptote.
pub fn integrate_trajectory(
    src: &dyn VelocitySource,
    start: ConfigPoint,
    t_start: f64,
    t_end: f64,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryResult, BohmError> {
    require_unit_kappa(src.sector())?;
    if !(start.r > 0.0) {
        return Err(BohmError::NonPositiveRadius(start.r));
    }
    let map = TortoiseMap::new(*src.metric())?;
    let rhs = Rhs {
        src,
        sign: src.sector().sign(),
    };
    let dir = if t_end >= t_start { 1.0 } else { -1.0 };
    let mut t = t_start;
    let mut y: State3 = [start.r, start.theta, start.phi];
    let mut k1 = rhs.eval(t, &y).ok_or(BohmError::ZeroDensity { r: y[0] })?;
    // `h_free` is the controller's proposal; `h` may be truncated to land on `t_end`.
    let mut h_free = opts.h_init.min((t_end - t_start).abs()).max(1e-300) * dir;
    let mut h;
    let mut samples = Vec::new();
    let record = |t: f64, y: &State3, samples: &mut Vec<TrajectorySample>| {
        if opts.record {
            samples.push(TrajectorySample {
                t,
                point: ConfigPoint {
                    r: y[0],
                    theta: y[1],
                    phi: y[2],
                },
                big_r: map.tortoise(y[0]),
            });
        }
    };
    record(t, &y, &mut samples);
    let mut steps = 0;
    while (t_end - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(BohmError::StepUnderflow { t, r: y[0] });
        }
        let truncated = (t + h_free - t_end) * dir > 0.0;
        h = if truncated { t_end - t } else { h_free };
        if h.abs() <= 8.0 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE) {
            if (t_end - t).abs() <= 1e-14 * t.abs().max(1.0) {
                break;
            }
            if k1[0] * dir < 0.0 && y[0] <= 10.0 * opts.r_min {
                // Time resolution exhausted just above the hand-off radius while falling in.
                return Ok(hand_off(src, t, y, dir, samples, steps, &record));
            }
            return Err(BohmError::StepUnderflow { t, r: y[0] });
        }
        steps += 1;
        let stages = (|| {
            let k2 = rhs.eval(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]))?;
            let k3 = rhs.eval(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
            let k4 = rhs.eval(
                t + C4 * h,
                &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
            )?;
            let k5 = rhs.eval(
                t + C5 * h,
                &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            )?;
            let k6 = rhs.eval(
                t + h,
                &axpy(
                    &y,
                    h,
                    &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
                ),
            )?;
            let y5 = axpy(
                &y,
                h,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let k7 = rhs.eval(t + h, &y5)?;
            Some((k3, k4, k5, k6, k7, y5))
        })();
        let Some((k3, k4, k5, k6, k7, y5)) = stages else {
            h_free = 0.25 * h;
            continue;
        };
        let mut err: f64 = 0.0;
        for i in 0..3 {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((e / sc).abs());
        }
        if err > 1.0 || !err.is_finite() {
            h_free = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            continue;
        }
        let t_new = t + h;
        if y5[0] <= opts.r_min && k1[0] * dir < 0.0 {
            // Locate the crossing r(t*) = r_min on the cubic Hermite interpolant.
            let (t_star, y_star) = locate_crossing(t, &y, &k1, h, &y5, &k7, opts.r_min);
            return Ok(hand_off(src, t_star, y_star, dir, samples, steps, &record));
        }
        t = t_new;
        y = y5;
        k1 = k7;
        record(t, &y, &mut samples);
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if !(truncated && fac >= 1.0) {
            h_free = h * fac;
        }
    }
    Ok(TrajectoryResult {
        samples,
        end: TrajectoryEnd::Completed,
        t,
        point: ConfigPoint {
            r: y[0],
            theta: y[1],
            phi: y[2],
        },
        steps,
        h_next: h_free.abs(),
    })
}

/// Switch to the closed-form asymptote at `(t, y)`: the singularity is reached after
/// `(r/C_rad)³` with `φ` shifted by `−slope·r`.
fn hand_off<F: Fn(f64, &State3, &mut Vec<TrajectorySample>)>(
    src: &dyn VelocitySource,
    t: f64,
    y: State3,
    dir: f64,
    mut samples: Vec<TrajectorySample>,
    steps: usize,
    record: &F,
) -> TrajectoryResult {
    let (cm, cp) = src.boundary(t);
    let (t_hit, phi_hit) = match asymptotic_coeffs(cm, cp, src.metric(), src.sector()) {
        Ok(c) => (
            t + dir * (y[0] / c.c_rad).powi(3),
            y[2] - c.phi_slope * y[0],
        ),
        Err(_) => (t, y[2]),
    };
    record(t, &y, &mut samples);
    TrajectoryResult {
        samples,
        end: TrajectoryEnd::Absorbed {
            t_event: t,
            t_hit,
            phi_hit,
        },
        t,
        point: ConfigPoint {
            r: y[0],
            theta: y[1],
            phi: y[2],
        },
        steps,
        h_next: 0.0,
    }
}

fn hermite(t0: f64, y0: &State3, f0: &State3, h: f64, y1: &State3, f1: &State3, t: f64) -> State3 {
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

fn locate_crossing(
    t0: f64,
    y0: &State3,
    f0: &State3,
    h: f64,
    y1: &State3,
    f1: &State3,
    level: f64,
) -> (f64, State3) {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let y = hermite(t0, y0, f0, h, y1, f1, t0 + mid * h);
        if y[0] > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = t0 + hi * h;
    let mut y = hermite(t0, y0, f0, h, y1, f1, t);
    y[0] = level;
    (t, y)
}

/// Closed-form continuation of a trajectory inside the hand-off radius.
pub fn asymptote_point(
    c: &AsymptoticCoeffs,
    t_hit: f64,
    theta: f64,
    phi_hit: f64,
    t: f64,
) -> ConfigPoint {
    let tau = (t - t_hit).abs();
    let r = c.c_rad * tau.cbrt();
    ConfigPoint {
        r,
        theta,
        phi: phi_hit + c.phi_slope * r,
    }
}

/// Fits of a trajectory against the short-distance laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub coeffs: AsymptoticCoeffs,
    pub t_hit: f64,
    pub samples_in_window: usize,
    /// Fitted exponent of `r` vs `|t − t₀|`.
    pub exponent: f64,
    /// Prefactor of `r = C|t − t₀|^{1/3}` (exponent fixed).
    pub prefactor: f64,
    /// Fitted slope of `φ` vs `r`.
    pub phi_slope: f64,
    /// Prefactor of `φ − φ₀ = C sgn(t − t₀)|t − t₀|^{1/3}` (exponent fixed).
    pub c_az_fit: f64,
    /// Fitted slope of `R` vs `|t − t₀|`.
    pub big_r_speed: f64,
    /// Exponent of `|θ − θ₀|` vs `|t − t₀|`; `+∞` when θ is exactly constant.
    pub theta_exponent: f64,
}

impl AsymptoticsReport {
    pub fn exponent_rel_err(&self) -> f64 {
        (self.exponent - 1.0 / 3.0).abs() * 3.0
    }
    pub fn prefactor_rel_err(&self) -> f64 {
        (self.prefactor / self.coeffs.c_rad - 1.0).abs()
    }
    pub fn phi_slope_rel_err(&self) -> f64 {
        (self.phi_slope / self.coeffs.phi_slope - 1.0).abs()
    }
    pub fn c_az_rel_err(&self) -> f64 {
        (self.c_az_fit / self.coeffs.c_az - 1.0).abs()
    }
    pub fn big_r_speed_rel_err(&self) -> f64 {
        (self.big_r_speed / self.coeffs.big_r_speed - 1.0).abs()
    }
}

/// Integrate an infalling frozen-field trajectory to the singularity and fit the
/// short-distance laws on `r ∈ [window.0, window.1]·|Q|`.
pub fn verify_trajectory_asymptotics(
    src: &dyn VelocitySource,
    start: ConfigPoint,
    t_start: f64,
    window: (f64, f64),
    opts: &TrajectoryOptions,
) -> Result<AsymptoticsReport, BohmError> {
    let (cm, cp) = src.boundary(t_start);
    let coeffs = asymptotic_coeffs(cm, cp, src.metric(), src.sector())?;
    let q = src.metric().abs_charge();
    // Generous horizon: time to cover R(start) at the boundary speed, times 100.
    let map = TortoiseMap::new(*src.metric())?;
    let horizon = 100.0 * map.tortoise(start.r) / coeffs.big_r_speed + 1.0;
    let res = integrate_trajectory(src, start, t_start, t_start + horizon, opts)?;
    let TrajectoryEnd::Absorbed { t_hit, phi_hit, .. } = res.end else {
        return Err(BohmError::FitWindow(0));
    };
    let theta0 = start.theta;
    let win: Vec<&TrajectorySample> = res
        .samples
        .iter()
        .filter(|s| s.point.r >= window.0 * q && s.point.r <= window.1 * q)
        .collect();
    if win.len() < 5 {
        return Err(BohmError::FitWindow(win.len()));
    }
    let tau: Vec<f64> = win.iter().map(|s| (s.t - t_hit).abs()).collect();
    let ln_tau: Vec<f64> = tau.iter().map(|v| v.ln()).collect();
    let ln_r: Vec<f64> = win.iter().map(|s| s.point.r.ln()).collect();
    let (exponent, _) = linear_fit(&ln_tau, &ln_r).ok_or(BohmError::FitWindow(win.len()))?;
    let prefactor = (ln_r
        .iter()
        .zip(&ln_tau)
        .map(|(a, b)| a - b / 3.0)
        .sum::<f64>()
        / win.len() as f64)
        .exp();
    let rs: Vec<f64> = win.iter().map(|s| s.point.r).collect();
    let phis: Vec<f64> = win.iter().map(|s| s.point.phi).collect();
    let (phi_slope, _) = linear_fit(&rs, &phis).ok_or(BohmError::FitWindow(win.len()))?;
    // φ − φ₀ = C_az sgn(t − t₀)|τ|^{1/3}: least squares through the origin.
    let sgn: Vec<f64> = win.iter().map(|s| (s.t - t_hit).signum()).collect();
    let xs: Vec<f64> = tau.iter().zip(&sgn).map(|(t, s)| s * t.cbrt()).collect();
    let num: f64 = xs.iter().zip(&phis).map(|(x, p)| x * (p - phi_hit)).sum();
    let den: f64 = xs.iter().map(|x| x * x).sum();
    let c_az_fit = num / den;
    let bigs: Vec<f64> = win.iter().map(|s| s.big_r).collect();
    let num_r: f64 = tau.iter().zip(&bigs).map(|(t, r)| t * r).sum();
    let den_r: f64 = tau.iter().map(|t| t * t).sum();
    let big_r_speed = num_r / den_r;
    let drift: Vec<(f64, f64)> = win
        .iter()
        .zip(&ln_tau)
        .filter_map(|(s, lt)| {
            let d = (s.point.theta - theta0).abs();
            (d > 0.0).then(|| (*lt, d.ln()))
        })
        .collect();
    let theta_exponent = if drift.len() < 3 {
        f64::INFINITY
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = drift.into_iter().unzip();
        linear_fit(&x, &y).map(|v| v.0).unwrap_or(f64::NAN)
    };
    Ok(AsymptoticsReport {
        coeffs,
        t_hit,
        samples_in_window: win.len(),
        exponent,
        prefactor,
        phi_slope,
        c_az_fit,
        big_r_speed,
        theta_exponent,
    })
}

/// Write trajectory samples as CSV with columns `t,r,theta,phi,R`.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    samples: &[TrajectorySample],
) -> std::io::Result<()> {
    writeln!(w, "t,r,theta,phi,R")?;
    for s in samples {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.t, s.point.r, s.point.theta, s.point.phi, s.big_r
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric() -> MetricParams {
        MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let s = AngularSector::new(1, -1).unwrap();
        let c = asymptotic_coeffs(
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            &metric(),
            s,
        )
        .unwrap();
        assert!((c.c_rad - 12f64.cbrt()).abs() < 1e-14);
        assert!((c.big_r_speed - c.c_rad.powi(3) / 12.0).abs() < 1e-14);
        assert!(matches!(
            asymptotic_coeffs(
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                &metric(),
                s
            ),
            Err(BohmError::NoFlux)
        ));
    }

    #[test]
    fn velocity_examples() {
        let m = metric();
        let f = Complex64::new(0.3, -0.4);
        let v = velocity_from_fields(&m, 1.0, 0.7, Complex64::new(0.0, 1.0) * f, f).unwrap();
        assert!((v.v1 + m.a2(0.7)).abs() < 1e-14);
        let v = velocity_from_fields(&m, 1.0, 0.7, f * 2.0, f).unwrap();
        assert_eq!(v.v1, 0.0);
        assert!(v.v3 != 0.0);
        assert!(velocity_from_fields(
            &m,
            1.0,
            0.7,
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0)
        )
        .is_err());
    }
}
