use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srn_ibc::bohm::*;
use srn_ibc::geometry::MetricParams;
use srn_ibc::radial::*;
use srn_ibc::spinors::{dirac_matrices, inner4, mat4_apply, AngularSector};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn metric() -> MetricParams {
    MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap()
}

#[test]
fn closed_form_current_matches_four_spinor_bilinears() {
    let d = dirac_matrices();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = MetricParams::new(2.0, 1.0, 0.3, 0.4).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let sector = AngularSector::new([1, -1][i % 2], [1, -1][(i / 2) % 2]).unwrap();
        let r = 10f64.powf(rng.random_range(-3.0..1.5));
        let (th, ph) = (rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI));
        let fp = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let fm = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let psi = four_spinor(
            &m,
            sector,
            ConfigPoint {
                r,
                theta: th,
                phi: ph,
            },
            fp,
            fm,
        )
        .unwrap();
        // The spinor components refer to the orthonormal frame (e_r, e_θ, e_φ), so the
        // frame current is Ψ†αᵏΨ with the standard Dirac matrices.
        let bil = |k: usize| inner4(&psi, &mat4_apply(&d.alpha[k], &psi)).re;
        let brute = [inner4(&psi, &psi).re, bil(0), bil(1), bil(2)];
        let closed = current_from_fields(&m, sector, r, th, fp, fm).unwrap();
        for k in 0..4 {
            worst = worst.max((brute[k] - closed[k]).abs() / brute[0]);
        }
    }
    assert!(worst < 1e-12, "worst relative deviation {worst:e}");
}

#[test]
fn velocity_is_coordinate_current_ratio() {
    let m = metric();
    let s = AngularSector::new(1, -1).unwrap();
    let (r, th) = (0.37, 1.1);
    let (fp, fm) = (c(0.2, -0.7), c(0.5, 0.3));
    let j = current_from_fields(&m, s, r, th, fp, fm).unwrap();
    let v = velocity_from_fields(&m, s.sign(), r, fp, fm).unwrap();
    let a = m.a(r);
    assert!((v.v1 - a * a * j[1] / j[0]).abs() < 1e-14);
    assert!((v.v3 - a * j[3] / (r * th.sin() * j[0])).abs() < 1e-14);
    assert_eq!(v.v2, 0.0);
}

#[test]
fn conjugation_reverses_velocity() {
    let m = metric();
    let (fp, fm) = (c(0.2, -0.7), c(0.5, 0.3));
    let v = velocity_from_fields(&m, 1.0, 0.5, fp, fm).unwrap();
    // Conjugating the radial functions reverses the radial motion only.
    let w = velocity_from_fields(&m, 1.0, 0.5, fp.conj(), fm.conj()).unwrap();
    assert!((v.v1 + w.v1).abs() < 1e-15 && (v.v3 - w.v3).abs() < 1e-15);
    // Full time reversal also sends m_j to −m_j, flipping sgn(m_j κ_j) and the azimuthal motion.
    let t = velocity_from_fields(&m, -1.0, 0.5, fp.conj(), fm.conj()).unwrap();
    assert!((v.v1 + t.v1).abs() < 1e-15 && (v.v3 + t.v3).abs() < 1e-15);
    for (tm, k) in [(1, 1), (1, -1), (3, 2)] {
        assert_eq!(
            AngularSector::new(-tm, k).unwrap().sign(),
            -AngularSector::new(tm, k).unwrap().sign()
        );
    }
}

#[test]
fn velocity_independent_of_angles_and_zero_density_rejected() {
    let s = AngularSector::new(-1, 1).unwrap();
    let field = FrozenField(
        FieldSnapshot::local_solution(metric(), s, c(1.0, 0.0), c(0.3, 0.8), c(0.0, 0.0), 10.0)
            .unwrap(),
    );
    let a = velocity_field(
        &field,
        0.0,
        ConfigPoint {
            r: 0.3,
            theta: 0.2,
            phi: 1.0,
        },
    )
    .unwrap();
    let b = velocity_field(
        &field,
        0.0,
        ConfigPoint {
            r: 0.3,
            theta: 2.9,
            phi: 5.0,
        },
    )
    .unwrap();
    assert_eq!(a, b);
    let empty = FrozenField(
        FieldSnapshot::local_solution(metric(), s, c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), 10.0)
            .unwrap(),
    );
    assert!(matches!(
        velocity_field(
            &empty,
            0.0,
            ConfigPoint {
                r: 0.3,
                theta: 0.2,
                phi: 1.0
            }
        ),
        Err(BohmError::ZeroDensity { .. })
    ));
    let k2 = AngularSector::new(1, 2).unwrap();
    assert!(current_from_fields(&metric(), k2, 0.3, 1.0, c(1.0, 0.0), c(0.0, 0.0)).is_err());
}

#[test]
fn infalling_local_solution_obeys_short_distance_laws() {
    let s = AngularSector::new(1, -1).unwrap();
    let (cm, cp) = (c(1.0, 0.0), c(0.6, 0.8));
    assert!((cm.conj() * cp).im > 0.0);
    let field =
        FrozenField(FieldSnapshot::local_solution(metric(), s, cm, cp, c(0.0, 0.0), 50.0).unwrap());
    let q = 2.0;
    let opts = TrajectoryOptions {
        r_min: 1e-6 * q,
        rtol: 1e-11,
        atol: 1e-16,
        ..Default::default()
    };
    let start = ConfigPoint {
        r: 0.05 * q,
        theta: 0.8,
        phi: 0.1,
    };
    let rep = verify_trajectory_asymptotics(&field, start, 0.0, (1e-4, 1e-2), &opts).unwrap();
    assert!(rep.exponent_rel_err() < 0.01, "{rep:?}");
    assert!(rep.prefactor_rel_err() < 0.02, "{rep:?}");
    assert!(rep.phi_slope_rel_err() < 0.05, "{rep:?}");
    assert!(rep.c_az_rel_err() < 0.05, "{rep:?}");
    assert!(rep.big_r_speed_rel_err() < 0.01, "{rep:?}");
    assert!(rep.theta_exponent >= 0.6);
}

#[test]
fn theta_is_exactly_constant_along_trajectories() {
    let s = AngularSector::new(1, 1).unwrap();
    let field = FrozenField(
        FieldSnapshot::local_solution(metric(), s, c(1.0, 0.0), c(0.3, -0.4), c(0.0, 0.0), 50.0)
            .unwrap(),
    );
    let res = integrate_trajectory(
        &field,
        ConfigPoint {
            r: 0.01,
            theta: 1.234,
            phi: 0.0,
        },
        0.0,
        0.5,
        &TrajectoryOptions::default(),
    )
    .unwrap();
    assert!(res.samples.len() > 2);
    assert!(res.samples.iter().all(|s| s.point.theta == 1.234));
}

#[test]
fn outgoing_field_emits_backwards_in_time() {
    // Im(c₋*c₊) < 0: forward motion is outward, and the past trajectory starts at r = 0.
    let s = AngularSector::new(1, -1).unwrap();
    let field = FrozenField(
        FieldSnapshot::local_solution(metric(), s, c(1.0, 0.0), c(0.0, -1.0), c(0.0, 0.0), 50.0)
            .unwrap(),
    );
    let start = ConfigPoint {
        r: 0.05,
        theta: 1.0,
        phi: 0.0,
    };
    let fwd = integrate_trajectory(&field, start, 0.0, 0.1, &TrajectoryOptions::default()).unwrap();
    assert_eq!(fwd.end, TrajectoryEnd::Completed);
    assert!(fwd.point.r > start.r);
    let back =
        integrate_trajectory(&field, start, 0.0, -10.0, &TrajectoryOptions::default()).unwrap();
    let TrajectoryEnd::Absorbed { t_hit, phi_hit, .. } = back.end else {
        panic!("{:?}", back.end)
    };
    assert!(t_hit < 0.0);
    // Restart on the emission asymptote and run forward: the path returns to the start.
    let coeffs = asymptotic_coeffs(c(1.0, 0.0), c(0.0, -1.0), &metric(), s).unwrap();
    assert_eq!(coeffs.direction, 1.0);
    let t1 = t_hit + (1e-3 / coeffs.c_rad).powi(3);
    let p1 = asymptote_point(&coeffs, t_hit, start.theta, phi_hit, t1);
    assert!((p1.r - 1e-3).abs() < 1e-15);
    let opts = TrajectoryOptions {
        rtol: 1e-11,
        atol: 1e-16,
        ..Default::default()
    };
    let again = integrate_trajectory(&field, p1, t1, 0.0, &opts).unwrap();
    assert!(
        (again.point.r - start.r).abs() < 1e-5 * start.r,
        "{:?}",
        again.point
    );
    assert!(
        (again.point.phi - start.phi).abs() < 1e-4,
        "{:?}",
        again.point
    );
}

#[test]
fn grid_state_field_matches_nodes_and_boundary() {
    let grid = RadialGrid::new(0.01, 800).unwrap();
    let setup = SectorSetup {
        metric: metric(),
        kappa: -1,
        twice_mj: 1,
        boundary: SectorBoundary::Ibc(IbcParams::simple(c(0.7, 0.0)).unwrap()),
    };
    let op = RadialHamiltonian::new(setup, grid).unwrap();
    let state = MiniFockState::boundary_profile(&op, c(1.0, 0.0), c(0.6, 0.8), 2.0);
    let snap = FieldSnapshot::from_state(&state, &op).unwrap();
    let (cm, cp) = op.scheme_boundary(&state);
    assert_eq!(snap.boundary, (cm, cp));
    assert!((snap.gauge_fields(0.0).0 - cp).norm() < 1e-15);
    // Interpolant reproduces node values.
    for k in [0usize, 5, 100, 700] {
        let t = op.terms.half[k];
        let (p, _) = snap.fields(t.r);
        assert!(
            (p - state.half[k]).norm() < 1e-10 * (1.0 + state.half[k].norm()),
            "k={k}"
        );
    }
    let far = snap.fields(snap.tortoise().inverse(grid.r_max() * 1.01).unwrap());
    assert_eq!(far, (c(0.0, 0.0), c(0.0, 0.0)));
}

#[test]
fn grid_state_trajectory_hits_singularity() {
    let grid = RadialGrid::new(0.005, 2000).unwrap();
    let setup = SectorSetup {
        metric: metric(),
        kappa: -1,
        twice_mj: 1,
        boundary: SectorBoundary::Ibc(IbcParams::simple(c(0.7, 0.0)).unwrap()),
    };
    let op = RadialHamiltonian::new(setup, grid).unwrap();
    let state = MiniFockState::boundary_profile(&op, c(1.0, 0.0), c(0.6, 0.8), 3.0);
    let field = FrozenField(FieldSnapshot::from_state(&state, &op).unwrap());
    let opts = TrajectoryOptions {
        r_min: 2e-6,
        rtol: 1e-10,
        atol: 1e-16,
        ..Default::default()
    };
    let rep = verify_trajectory_asymptotics(
        &field,
        ConfigPoint {
            r: 0.1,
            theta: 0.5,
            phi: 0.0,
        },
        0.0,
        (1e-4, 1e-2),
        &opts,
    )
    .unwrap();
    assert!(rep.exponent_rel_err() < 0.01, "{rep:?}");
    assert!(rep.prefactor_rel_err() < 0.02, "{rep:?}");
    assert!(rep.phi_slope_rel_err() < 0.05, "{rep:?}");
}

#[test]
fn linear_in_time_interpolates_boundary() {
    let s = AngularSector::new(1, -1).unwrap();
    let a = FieldSnapshot::local_solution(metric(), s, c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), 10.0)
        .unwrap();
    let b = FieldSnapshot::local_solution(metric(), s, c(0.0, 0.0), c(0.0, 3.0), c(0.0, 0.0), 10.0)
        .unwrap();
    let lin = LinearInTime {
        a: &a,
        b: &b,
        t0: 1.0,
        t1: 2.0,
    };
    assert_eq!(lin.boundary(1.5), (c(0.5, 0.0), c(0.0, 2.0)));
    let (p, _) = lin.fields(1.25, 0.4);
    let (pa, _) = a.fields(0.4);
    assert!((p - pa * 1.5).norm() < 1e-14);
}

#[test]
fn csv_has_header_and_rows() {
    let s = TrajectorySample {
        t: 0.5,
        point: ConfigPoint {
            r: 1.0,
            theta: 2.0,
            phi: 3.0,
        },
        big_r: 4.0,
    };
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &[s, s]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,r,theta,phi,R");
    assert_eq!(lines.len(), 3);
    let vals: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals, vec![0.5, 1.0, 2.0, 3.0, 4.0]);
}
