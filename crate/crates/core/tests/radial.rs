use num_complex::Complex64;
use proptest::prelude::*;
use srn_ibc::geometry::MetricParams;
use srn_ibc::radial::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn setup(kappa: i32, boundary: SectorBoundary) -> SectorSetup {
    SectorSetup {
        metric: MetricParams::new(2.0, 1.0, 0.2, 0.5).unwrap(),
        kappa,
        twice_mj: 1,
        boundary,
    }
}

fn coupled(g: Complex64) -> SectorBoundary {
    SectorBoundary::Ibc(IbcParams::simple(g).unwrap())
}

fn max_abs(m: &nalgebra::DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn hermitian_for_general_ibc_on_200_nodes() {
    let grid = RadialGrid::new(0.05, 200).unwrap();
    for a in [
        [1.0, 0.0, 0.0, 1.0],
        [0.5, -0.5, 1.0, 1.0],
        [0.2, 1.0, -1.0, 0.0],
    ] {
        let b = SectorBoundary::Ibc(IbcParams::new(a, c(0.6, -0.8)).unwrap());
        let op = RadialHamiltonian::new(setup(-1, b), grid).unwrap();
        let h = op.dense();
        assert!(max_abs(&(&h - h.adjoint())) <= 1e-14 * max_abs(&h));
    }
}

#[test]
fn decoupled_sectors_assemble_block_diagonal() {
    let grid = RadialGrid::new(0.1, 20).unwrap();
    let a = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
    let b =
        RadialHamiltonian::new(setup(2, SectorBoundary::Extension { theta: 0.0 }), grid).unwrap();
    let d =
        RadialHamiltonian::new(setup(1, SectorBoundary::Extension { theta: 1.1 }), grid).unwrap();
    let m = assemble_sectors(&[&a, &b, &d]);
    let n0 = a.dim();
    let n1 = b.dim() - 1;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let bi = if i < n0 {
                0
            } else if i < n0 + n1 {
                1
            } else {
                2
            };
            let bj = if j < n0 {
                0
            } else if j < n0 + n1 {
                1
            } else {
                2
            };
            if bi != bj {
                assert_eq!(m[(i, j)], c(0.0, 0.0));
            }
        }
    }
    assert!(max_abs(&(&m - m.adjoint())) == 0.0);
}

#[test]
fn free_operator_drops_mass_and_charge_terms() {
    let grid = RadialGrid::new(0.1, 30).unwrap();
    let free = SectorSetup {
        metric: MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap(),
        kappa: -1,
        twice_mj: 1,
        boundary: SectorBoundary::Extension { theta: 0.0 },
    };
    let op = RadialHamiltonian::new(free, grid).unwrap();
    assert!(op
        .terms
        .half
        .iter()
        .chain(&op.terms.whole)
        .all(|t| t.v_plus == 0.0 && t.v_minus == 0.0));
    assert!(op.diag[2..].iter().all(|&d| d == 0.0));
}

#[test]
fn plane_wave_derivatives_in_interior() {
    // Far from the singularity u ≈ κ/R·(…) is smooth; test against the continuum operator
    // with the exact u at nodes. Second-order convergence of the interior stencil.
    let k = 1.3;
    let mut errs = Vec::new();
    for &dr in &[0.02, 0.01, 0.005] {
        let n = (40.0 / dr) as usize;
        let grid = RadialGrid::new(dr, n).unwrap();
        let s = SectorSetup {
            metric: MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap(),
            kappa: 1,
            twice_mj: 1,
            boundary: SectorBoundary::Extension { theta: 0.0 },
        };
        let op = RadialHamiltonian::new(s, grid).unwrap();
        let f = |r: f64| (c(0.0, k * r)).exp();
        let state = MiniFockState::from_fn(&grid, op.layout, c(0.0, 0.0), |r| {
            (f(r), c(0.0, 1.0) * f(r))
        });
        let out = op.apply(&state).unwrap();
        // (hφ)₊ = −∂φ₋ + uφ₋ at half nodes, (hφ)₋ = ∂φ₊ + uφ₊ at whole nodes.
        let mut err: f64 = 0.0;
        for j in 0..grid.n - 1 {
            let r = grid.half_node(j);
            if !(15.0..25.0).contains(&r) {
                continue;
            }
            let u = op.terms.half[j].u;
            let expect = -c(0.0, 1.0) * c(0.0, k) * f(r) + c(0.0, 1.0) * f(r) * u;
            err = err.max((out.half[j] - expect).norm());
            let rw = grid.whole_node(j);
            let uw = op.terms.whole[j].u;
            let expect_w = c(0.0, k) * f(rw) + f(rw) * uw;
            err = err.max((out.whole[j] - expect_w).norm());
        }
        errs.push(err);
    }
    let order = (errs[0] / errs[2]).log2() / 2.0;
    assert!(order > 1.8, "errors {errs:?}");
}

#[test]
fn norm_conserved_over_many_steps() {
    let grid = RadialGrid::new(0.05, 200).unwrap();
    let op = RadialHamiltonian::new(setup(-1, coupled(c(0.7, 0.2))), grid).unwrap();
    let mut state = MiniFockState::from_fn(&grid, op.layout, c(0.3, 0.1), |r| {
        let e = (-(r - 4.0) * (r - 4.0)).exp();
        (c(0.0, 1.0) * e, c(e, 0.0))
    });
    state.normalize(&grid);
    let stepper = CayleyStepper::new(&op, 0.01).unwrap();
    let mut y = state.to_scaled(&grid);
    for _ in 0..10_000 {
        stepper.step(&mut y);
    }
    let after = MiniFockState::from_scaled(&y, &grid, op.layout);
    assert!((after.total_norm(&grid) - 1.0).abs() < 1e-10);
}

#[test]
fn vacuum_creates_particles_only_when_coupled() {
    let grid = RadialGrid::new(0.02, 500).unwrap();
    let op = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
    let out = evolve(&MiniFockState::vacuum(&grid, op.layout), &op, 0.01, 100).unwrap();
    assert!(out.particle_norm(&grid) > 1e-6);
    assert!(out.psi0.norm() < 1.0);

    let dec =
        RadialHamiltonian::new(setup(-1, SectorBoundary::Extension { theta: 0.0 }), grid).unwrap();
    let out = evolve(&MiniFockState::vacuum(&grid, dec.layout), &dec, 0.01, 100).unwrap();
    assert_eq!(out.particle_norm(&grid), 0.0);
    assert!((out.psi0.norm() - 1.0).abs() < 1e-15);
}

#[test]
fn semi_discrete_flux_identity() {
    // d|Ψ⁰|²/dt = 2 Im(c₋* c₊) with the scheme boundary values, for several IBCs.
    let grid = RadialGrid::new(0.05, 100).unwrap();
    for a in [
        [1.0, 0.0, 0.0, 1.0],
        [0.5, -0.5, 1.0, 1.0],
        [0.2, 1.0, -1.0, 0.0],
    ] {
        let b = SectorBoundary::Ibc(IbcParams::new(a, c(0.6, -0.8)).unwrap());
        let op = RadialHamiltonian::new(setup(1, b), grid).unwrap();
        let state = MiniFockState::from_fn(&grid, op.layout, c(0.4, -0.3), |r| {
            let e = (-(r - 1.0) * (r - 1.0)).exp();
            (c(0.3, 1.0) * e, c(e, -0.2))
        });
        let h = op.apply(&state).unwrap();
        // dΨ⁰/dt = −i (HΨ)⁰
        let d = 2.0 * (state.psi0.conj() * (c(0.0, -1.0) * h.psi0)).re;
        let (cm, cp) = op.scheme_boundary(&state);
        assert!((d - 2.0 * (cm.conj() * cp).im).abs() < 1e-12, "{a:?}");
        // IBC holds exactly for the scheme values.
        if let SectorBoundary::Ibc(p) = b {
            assert!((cm * p.a[0] + cp * p.a[1] - p.g * state.psi0).norm() < 1e-13);
        }
    }
}

#[test]
fn synthetic_boundary_fit_is_exact_for_the_model() {
    let grid = RadialGrid::new(0.01, 50).unwrap();
    let op = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
    let (cm, cp) = (c(0.3, -0.2), c(-1.0, 0.5));
    let state = MiniFockState::from_fn(&grid, op.layout, c(0.0, 0.0), |r| {
        (cp + c(0.1, 0.2) * r.cbrt(), cm - c(0.7, 0.0) * r.cbrt())
    });
    let b = extract_boundary_coeffs(&state, &op).unwrap();
    assert!((b.c_plus - cp).norm() < 1e-13 && (b.c_minus - cm).norm() < 1e-13);
    assert!(!b.warning);
}

#[test]
fn boundary_fit_error_scales_with_two_thirds_power() {
    let (cm, cp) = (c(0.3, -0.2), c(-1.0, 0.5));
    let mut errs = Vec::new();
    for &dr in &[0.04, 0.02, 0.01, 0.005] {
        let grid = RadialGrid::new(dr, 50).unwrap();
        let op = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
        let state = MiniFockState::from_fn(&grid, op.layout, c(0.0, 0.0), |r| {
            (
                cp + c(0.1, 0.2) * r.cbrt() + 0.5 * r.powf(2.0 / 3.0),
                cm - c(0.7, 0.0) * r.cbrt() + c(0.0, 0.4) * r.powf(2.0 / 3.0),
            )
        });
        let b = extract_boundary_coeffs(&state, &op).unwrap();
        errs.push((b.c_plus - cp).norm().max((b.c_minus - cm).norm()));
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 2.0 / 3.0).abs() < 0.05, "{errs:?}");
    }
}

#[test]
fn domain_violation_detected() {
    let grid = RadialGrid::new(0.01, 50).unwrap();
    let op = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
    let state = MiniFockState::from_fn(&grid, op.layout, c(0.0, 0.0), |_| {
        (c(0.0, 0.0), c(0.8, 0.0))
    });
    let r = ibc_residual(&state, &op).unwrap();
    assert!((r - 0.8).abs() < 1e-12);
    let ok = MiniFockState::from_fn(&grid, op.layout, c(1.0, 0.0), |_| {
        (c(0.2, 0.0), c(0.5, 0.0))
    });
    assert!(ibc_residual(&ok, &op).unwrap() < 1e-13);
}

#[test]
fn position_representation_consistency() {
    // |Q|^{1/2} r^{1/2} ⟨Φ±, Ψ¹⟩ with Ψ¹ = (φ₊Φ⁺ + φ₋Φ⁻)/(r A^{1/2}) tends to φ±(0) since rA → |Q|.
    let p = MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap();
    let map = srn_ibc::geometry::TortoiseMap::new(p).unwrap();
    let cm = c(0.3, -0.2);
    let mut prev = f64::INFINITY;
    for k in 1..6 {
        let r = 10f64.powi(-k);
        let big_r = map.tortoise(r);
        let phi_minus = cm + c(0.5, 0.1) * big_r.cbrt();
        let proj = phi_minus / (r * p.a(r).sqrt()) * (p.abs_charge() * r).sqrt();
        let e = (proj - cm).norm();
        assert!(e < prev);
        prev = e;
    }
    assert!(prev < 1e-4);
}

#[test]
fn ibc_residual_converges_under_refinement() {
    let t_final = 1.0;
    let mut res = Vec::new();
    for &dr in &[0.02, 0.01, 0.005] {
        let grid = RadialGrid::new(dr, (12.0 / dr) as usize).unwrap();
        let op = RadialHamiltonian::new(setup(-1, coupled(c(0.5, 0.0))), grid).unwrap();
        let steps = (t_final / dr).round() as usize;
        let out = evolve(
            &MiniFockState::vacuum(&grid, op.layout),
            &op,
            t_final / steps as f64,
            steps,
        )
        .unwrap();
        res.push(ibc_residual(&out, &op).unwrap());
    }
    let order = (res[0] / res[2]).log2() / 2.0;
    assert!(order >= 0.6, "residuals {res:?}, order {order}");
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let grid = RadialGrid::new(0.1, 25).unwrap();
    for b in [
        coupled(c(0.5, -0.25)),
        SectorBoundary::Extension { theta: 1.2 },
    ] {
        let op = RadialHamiltonian::new(setup(2, b), grid).unwrap();
        let state = MiniFockState::from_fn(&grid, op.layout, c(0.1, 1.0 / 3.0), |r| {
            (c(r.sin(), 1.0 / (1.0 + r)), c(r.cos() / 7.0, -r))
        });
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &state, &op, 2.5).unwrap();
        let snap = read_snapshot(&buf[..]).unwrap();
        assert_eq!(snap.state, state);
        assert_eq!(snap.grid, grid);
        assert_eq!(snap.setup, op.setup);
        assert_eq!(snap.time, 2.5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hermitian_for_random_parameters(
        q in 0.5f64..4.0, frac in 0.0f64..0.95, qq in -1.0f64..1.0, m in 0.0f64..2.0,
        kappa in prop::sample::select(vec![-3, -2, -1, 1, 2, 3]),
        a1 in -2.0f64..2.0, a2 in -2.0f64..2.0, a3 in -2.0f64..2.0,
        gr in -1.0f64..1.0, gi in -1.0f64..1.0, dr in 0.005f64..0.2,
    ) {
        prop_assume!(a1.abs() > 0.1 && (gr.abs() + gi.abs()) > 1e-3);
        let a4 = (1.0 + a2 * a3) / a1;
        let b = SectorBoundary::Ibc(IbcParams::new([a1, a2, a3, a4], c(gr, gi)).unwrap());
        let s = SectorSetup { metric: MetricParams::new(q, frac * q, qq, m).unwrap(), kappa, twice_mj: 1, boundary: b };
        let op = RadialHamiltonian::new(s, RadialGrid::new(dr, 40).unwrap()).unwrap();
        let h = op.dense();
        prop_assert!(max_abs(&(&h - h.adjoint())) == 0.0);
    }

    #[test]
    fn cayley_step_is_unitary(seed in 0u64..1000) {
        let grid = RadialGrid::new(0.05, 60).unwrap();
        let op = RadialHamiltonian::new(setup(1, coupled(c(0.8, 0.1))), grid).unwrap();
        let st = CayleyStepper::new(&op, 0.03).unwrap();
        let mut y: Vec<Complex64> = (0..grid.dim()).map(|i| {
            let x = ((i as u64 + 1) * (seed + 7)) as f64;
            c((x * 0.37).sin(), (x * 0.11).cos())
        }).collect();
        let n0: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        st.step(&mut y);
        let n1: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n1 / n0 - 1.0).abs() < 1e-13);
    }
}
