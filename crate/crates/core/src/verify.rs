//! Invariant suites run by the command-line driver (`verify <suite>`). Each check reports
//! the measured value, its tolerance and the verdict; a suite passes if all checks pass.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bellprocess::{equivariance_test, holding_time_fit, jump_rate, ProcessParams};
use crate::bohm::{
    current_from_fields, four_spinor, verify_trajectory_asymptotics, ConfigPoint, FieldSnapshot,
    FrozenField, TrajectoryOptions,
};
use crate::geometry::{fit_inverse_power_law, MetricParams, TortoiseMap};
use crate::numerics::gauss_legendre;
use crate::radial::{
    evolve, ibc_residual, CayleyStepper, IbcParams, MiniFockState, RadialGrid, RadialHamiltonian,
    SectorBoundary, SectorSetup,
};
use crate::spinors::{
    alpha_matrix_elements, angular_eigenchecks, dirac_matrices, inner4, mat4_apply, norm_sqr4,
    phi_basis, AngularSector, Parity, SphereQuadrature,
};

/// Suites known to the driver.
pub const SUITES: [&str; 5] = ["geometry", "spinors", "hamiltonian", "bohm", "process"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }

    /// Passes when `value >= tolerance` (the tolerance is a lower bound).
    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value >= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("unknown suite {0:?}; expected one of geometry, spinors, hamiltonian, bohm, process")]
    UnknownSuite(String),
    #[error("suite {suite} failed to run: {msg}")]
    Failed { suite: String, msg: String },
}

/// Run a suite by name.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport, VerifyError> {
    let fail = |e: String| VerifyError::Failed { suite: name.into(), msg: e };
    let checks = match name {
        "geometry" => geometry_checks().map_err(fail)?,
        "spinors" => spinor_checks(seed).map_err(fail)?,
        "hamiltonian" => hamiltonian_checks().map_err(fail)?,
        "bohm" => bohm_checks(seed).map_err(fail)?,
        "process" => process_checks(seed).map_err(fail)?,
        other => return Err(VerifyError::UnknownSuite(other.into())),
    };
    Ok(SuiteReport { suite: name.into(), checks })
}

fn reference_metric() -> MetricParams {
    MetricParams::new(2.0, 1.0, 0.0, 0.0).expect("valid reference metric")
}

fn geometry_checks() -> Result<Vec<Check>, String> {
    let p = reference_metric();
    let map = TortoiseMap::new(p).map_err(|e| e.to_string())?;
    let c = map.constant();
    let mut checks = vec![
        Check::at_most("tortoise constant vs -0.601", (c + 0.601).abs(), 1e-3),
        Check::at_most("tortoise constant vs -pi/(3 sqrt 3)", (c + PI / (3.0 * 3f64.sqrt())).abs(), 1e-12),
    ];
    let fit = fit_inverse_power_law(&p, 1e-12, 1e-6, 200).map_err(|e| e.to_string())?;
    checks.push(Check::at_most("r(R) exponent vs 1/3", (fit.exponent - 1.0 / 3.0).abs(), 1e-3));
    checks.push(Check::at_most("r(R) prefactor vs (3Q^2)^(1/3), relative", (fit.prefactor / 12f64.cbrt() - 1.0).abs(), 1e-3));
    // Gauss–Legendre quadrature of dR/dr = A⁻² on [0, r].
    let (x, w) = gauss_legendre(40);
    let mut quad_err: f64 = 0.0;
    for &r in &[0.1, 0.5, 1.0, 2.0, 5.0] {
        let integral: f64 = x.iter().zip(&w).map(|(xi, wi)| 0.5 * r * wi / p.a2(0.5 * r * (xi + 1.0))).sum();
        quad_err = quad_err.max((integral - map.tortoise(r)).abs() / integral);
    }
    checks.push(Check::at_most("tortoise vs quadrature, relative", quad_err, 1e-10));
    let mut rt: f64 = 0.0;
    for k in -12..=2 {
        let big_r = 10f64.powi(k);
        let r = map.inverse(big_r).map_err(|e| e.to_string())?;
        rt = rt.max((map.tortoise(r) - big_r).abs() / big_r);
    }
    checks.push(Check::at_most("inverse round trip, relative", rt, 1e-12));
    Ok(checks)
}

fn spinor_checks(seed: u64) -> Result<Vec<Check>, String> {
    let quad = SphereQuadrature::new(24, 32);
    let basis: Vec<(AngularSector, Parity)> = AngularSector::enumerate(2)
        .into_iter()
        .flat_map(|s| [(s, Parity::Plus), (s, Parity::Minus)])
        .collect();
    let mut ortho: f64 = 0.0;
    for (i, &(sa, pa)) in basis.iter().enumerate() {
        for &(sb, pb) in &basis[i..] {
            let v = quad.integrate(|t, f| {
                inner4(&phi_basis(sa, pa, t, f).unwrap(), &phi_basis(sb, pb, t, f).unwrap())
            });
            let target = if (sa, pa) == (sb, pb) { 1.0 } else { 0.0 };
            ortho = ortho.max((v - Complex64::from(target)).norm());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut point, mut alpha) = (0.0f64, 0.0f64);
    for s in AngularSector::enumerate(1) {
        for _ in 0..250 {
            let (t, f) = (rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI));
            for p in [Parity::Plus, Parity::Minus] {
                let v = norm_sqr4(&phi_basis(s, p, t, f).map_err(|e| e.to_string())?);
                point = point.max((v - 1.0 / (4.0 * PI)).abs());
            }
            let e = alpha_matrix_elements(s, t, f).map_err(|e| e.to_string())?;
            let c = 1.0 / (4.0 * PI);
            alpha = alpha
                .max((e[0] - Complex64::new(0.0, -c)).norm())
                .max(e[1].norm())
                .max((e[2] - Complex64::from(s.sign() * t.sin() * c)).norm());
        }
    }
    let mut eig: f64 = 0.0;
    for s in AngularSector::enumerate(3) {
        for p in [Parity::Plus, Parity::Minus] {
            eig = eig.max(angular_eigenchecks(s, p).map_err(|e| e.to_string())?.max_residual());
        }
    }
    Ok(vec![
        Check::at_most("orthonormality |kappa| <= 2", ortho, 1e-10),
        Check::at_most("|Phi|^2 = 1/4pi pointwise", point, 1e-12),
        Check::at_most("alpha matrix elements", alpha, 1e-12),
        Check::at_most("J^2, J3, K, beta eigenrelations |kappa| <= 3", eig, 1e-8),
    ])
}

fn test_setup(kappa: i32, boundary: SectorBoundary) -> SectorSetup {
    SectorSetup {
        metric: MetricParams::new(2.0, 1.0, 0.2, 0.5).expect("valid metric"),
        kappa,
        twice_mj: 1,
        boundary,
    }
}

fn hamiltonian_checks() -> Result<Vec<Check>, String> {
    let s = |e: crate::radial::RadialError| e.to_string();
    let grid = RadialGrid::new(0.05, 200).map_err(s)?;
    let ibc = SectorBoundary::Ibc(IbcParams::new([0.5, -0.5, 1.0, 1.0], Complex64::new(0.6, -0.8)).map_err(s)?);
    let op = RadialHamiltonian::new(test_setup(-1, ibc), grid).map_err(s)?;
    let h = op.dense();
    let scale = h.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let herm = (&h - h.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
    let mut state = MiniFockState::from_fn(&grid, op.layout, Complex64::new(0.3, 0.1), |r| {
        let e = (-(r - 4.0) * (r - 4.0)).exp();
        (Complex64::new(0.0, e), Complex64::new(e, 0.0))
    });
    state.normalize(&grid);
    let stepper = CayleyStepper::new(&op, 0.01).map_err(s)?;
    let mut y = state.to_scaled(&grid);
    for _ in 0..10_000 {
        stepper.step(&mut y);
    }
    let drift = (MiniFockState::from_scaled(&y, &grid, op.layout).total_norm(&grid) - 1.0).abs();

    let g = Complex64::new(0.5, 0.0);
    let cgrid = RadialGrid::new(0.02, 600).map_err(s)?;
    let coupled = RadialHamiltonian::new(test_setup(-1, SectorBoundary::Ibc(IbcParams::simple(g).map_err(s)?)), cgrid).map_err(s)?;
    let created = evolve(&MiniFockState::vacuum(&cgrid, coupled.layout), &coupled, 0.01, 1000).map_err(s)?.particle_norm(&cgrid);
    let dec = RadialHamiltonian::new(test_setup(-1, SectorBoundary::Extension { theta: 0.0 }), cgrid).map_err(s)?;
    let none = evolve(&MiniFockState::vacuum(&cgrid, dec.layout), &dec, 0.01, 1000).map_err(s)?.particle_norm(&cgrid);

    let mut res = Vec::new();
    for &dr in &[0.02, 0.01, 0.005] {
        let grid = RadialGrid::new(dr, (12.0 / dr) as usize).map_err(s)?;
        let op = RadialHamiltonian::new(test_setup(-1, SectorBoundary::Ibc(IbcParams::simple(g).map_err(s)?)), grid).map_err(s)?;
        let steps = (1.0 / dr).round() as usize;
        let out = evolve(&MiniFockState::vacuum(&grid, op.layout), &op, 1.0 / steps as f64, steps).map_err(s)?;
        res.push(ibc_residual(&out, &op).map_err(s)?);
    }
    let order = (res[0] / res[2]).log2() / 2.0;
    Ok(vec![
        Check::at_most("Hermiticity ||H - H^*||/||H||, N = 200", herm, 1e-14),
        Check::at_most("norm drift over 1e4 Cayley steps", drift, 1e-10),
        Check::at_least("1-particle probability after 1e3 steps from vacuum", created, 1e-6),
        Check::at_most("1-particle probability without coupling", none, 1e-14),
        Check::at_least("IBC residual convergence order", order, 0.6),
    ])
}

fn bohm_checks(seed: u64) -> Result<Vec<Check>, String> {
    let d = dirac_matrices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = MetricParams::new(2.0, 1.0, 0.3, 0.4).expect("valid metric");
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let sector = AngularSector::new([1, -1][i % 2], [1, -1][(i / 2) % 2]).map_err(|e| e.to_string())?;
        let r = 10f64.powf(rng.random_range(-3.0..1.5));
        let (th, ph) = (rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI));
        let fp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let fm = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let psi = four_spinor(&m, sector, ConfigPoint { r, theta: th, phi: ph }, fp, fm).map_err(|e| e.to_string())?;
        let brute = [
            inner4(&psi, &psi).re,
            inner4(&psi, &mat4_apply(&d.alpha[0], &psi)).re,
            inner4(&psi, &mat4_apply(&d.alpha[1], &psi)).re,
            inner4(&psi, &mat4_apply(&d.alpha[2], &psi)).re,
        ];
        let closed = current_from_fields(&m, sector, r, th, fp, fm).map_err(|e| e.to_string())?;
        for k in 0..4 {
            worst = worst.max((brute[k] - closed[k]).abs() / brute[0]);
        }
    }
    let rep = frozen_field_asymptotics().map_err(|e| e.to_string())?;
    Ok(vec![
        Check::at_most("closed-form current vs 4-spinor, relative", worst, 1e-12),
        Check::at_most("r(t) exponent, relative to 1/3", rep.exponent_rel_err(), 0.01),
        Check::at_most("r(t) prefactor vs C_rad, relative", rep.prefactor_rel_err(), 0.02),
        Check::at_most("phi(r) slope, relative", rep.phi_slope_rel_err(), 0.05),
        Check::at_most("phi(t) prefactor vs C_az, relative", rep.c_az_rel_err(), 0.05),
        Check::at_least("theta drift exponent", rep.theta_exponent, 0.6),
    ])
}

/// Frozen-field trajectory of an IBC-consistent near-boundary state with `Im(c₋*c₊) > 0`
/// (`M = 1`, `Q = 2`, `m = q = 0`, `κ = −1`), fitted on `r ∈ [1e-4, 1e-2]·|Q|`.
pub fn frozen_field_asymptotics() -> Result<crate::bohm::AsymptoticsReport, Box<dyn std::error::Error>> {
    let grid = RadialGrid::new(0.005, 2000)?;
    let setup = SectorSetup {
        metric: reference_metric(),
        kappa: -1,
        twice_mj: 1,
        boundary: SectorBoundary::Ibc(IbcParams::simple(Complex64::new(0.7, 0.0))?),
    };
    let op = RadialHamiltonian::new(setup, grid)?;
    let state = MiniFockState::boundary_profile(&op, Complex64::new(1.0, 0.0), Complex64::new(0.6, 0.8), 3.0);
    let field = FrozenField(FieldSnapshot::from_state(&state, &op)?);
    let q = setup.metric.abs_charge();
    let opts = TrajectoryOptions { r_min: 1e-6 * q, rtol: 1e-10, atol: 1e-16, ..Default::default() };
    let start = ConfigPoint { r: 0.05 * q, theta: 0.5, phi: 0.0 };
    Ok(verify_trajectory_asymptotics(&field, start, 0.0, (1e-4, 1e-2), &opts)?)
}

fn process_checks(seed: u64) -> Result<Vec<Check>, String> {
    let one = Complex64::new(1.0, 0.0);
    let minus_i = Complex64::new(0.0, -1.0);
    let rate = jump_rate(one, minus_i, one).map_err(|e| e.to_string())?;
    let s = AngularSector::new(1, -1).map_err(|e| e.to_string())?;
    let field = FrozenField(FieldSnapshot::local_solution(reference_metric(), s, one, minus_i, one, 10.0).map_err(|e| e.to_string())?);
    let hold = holding_time_fit(&field, one, 20_000, 0.01, seed, 1e-3).map_err(|e| e.to_string())?;

    let grid = RadialGrid::new(0.01, 2500).map_err(|e| e.to_string())?;
    let setup = SectorSetup {
        metric: reference_metric(),
        kappa: -1,
        twice_mj: 1,
        boundary: SectorBoundary::Ibc(IbcParams::simple(Complex64::new(0.5f64.sqrt(), 0.0)).map_err(|e| e.to_string())?),
    };
    let op = RadialHamiltonian::new(setup, grid).map_err(|e| e.to_string())?;
    let state = MiniFockState::gaussian(&op, 6.0, 1.0, (Complex64::new(0.0, 1.0), one));
    let steps = 1100;
    let params = ProcessParams {
        walkers: 2000,
        seed,
        dt: 0.01,
        steps,
        checkpoints: (0..=5).map(|k| k * steps / 5).collect(),
        ..Default::default()
    };
    let (_, rep) = equivariance_test(&op, &state, &params).map_err(|e| e.to_string())?;
    let worst_tv = rep.checkpoints.iter().map(|c| (c.tv - c.tv_expected) / c.tv_sigma).fold(f64::MIN, f64::max);
    let worst_z = rep.checkpoints.iter().map(|c| c.z_vacuum.abs()).fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("rate for c- = 1, c+ = -i, Psi0 = 1, Q = 2 vs 1", (rate - 1.0).abs(), 1e-12),
        Check::at_most("holding-time MLE vs implemented rate, |z|", hold.z().abs(), 3.0),
        Check::at_most("equivariance TV excess over noise, sigmas", worst_tv, 3.0),
        Check::at_most("equivariance P(empty) |z|", worst_z, 3.0),
        Check::at_most("lost walkers", rep.lost_walkers as f64, 0.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("nope", 1), Err(VerifyError::UnknownSuite(_))));
    }

    #[test]
    #[ignore = "runs every suite; exercised by the command-line tests"]
    fn print_all_suites() {
        for s in SUITES {
            let rep = run_suite(s, 1).unwrap();
            for c in &rep.checks {
                println!("{s}: {} value {:.3e} tol {:.1e} {}", c.name, c.value, c.tolerance, c.passed);
            }
        }
    }

    #[test]
    fn check_directions() {
        assert!(Check::at_most("a", 1.0, 2.0).passed);
        assert!(!Check::at_least("a", 1.0, 2.0).passed);
    }
}
