use proptest::prelude::*;
use srn_ibc::geometry::{fit_inverse_power_law, metric_factor, MetricParams, TortoiseMap};
use srn_ibc::numerics::gauss_legendre;

/// Independent oracle: composite Gauss–Legendre quadrature of r²/(r² − 2Mr + Q²) on [0, r].
fn quadrature_tortoise(p: &MetricParams, r: f64) -> f64 {
    let (x, w) = gauss_legendre(20);
    let width = 0.1 * p.abs_charge();
    let panels = ((r / width).ceil() as usize).max(1);
    let h = r / panels as f64;
    let f = |s: f64| s * s / (s * s - 2.0 * p.source_mass * s + p.source_charge * p.source_charge);
    let mut total = 0.0;
    for k in 0..panels {
        let a = k as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total += 0.5 * h * wi * f(a + 0.5 * h * (xi + 1.0));
        }
    }
    total
}

#[test]
fn closed_form_matches_quadrature_on_log_grid() {
    let p = MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap();
    let map = TortoiseMap::new(p).unwrap();
    for k in 0..=54 {
        let r = 1e-6 * 10f64.powf(k as f64 / 6.0);
        let exact = quadrature_tortoise(&p, r);
        let got = map.tortoise(r);
        assert!(
            (got - exact).abs() <= 1e-8 * exact,
            "r = {r}: {got} vs {exact}"
        );
    }
}

#[test]
fn derivative_matches_inverse_metric_factor() {
    let p = MetricParams::new(1.5, 0.9, 0.0, 0.0).unwrap();
    let map = TortoiseMap::new(p).unwrap();
    for k in 0..40 {
        let r = 1e-3 * 10f64.powf(k as f64 / 8.0);
        let h = 1e-5 * r;
        let fd = (map.tortoise(r + h) - map.tortoise(r - h)) / (2.0 * h);
        let exact = 1.0 / metric_factor(r, &p).unwrap();
        assert!((fd - exact).abs() <= 1e-8 * exact, "r = {r}");
    }
}

#[test]
fn monotone_on_dense_grid() {
    let p = MetricParams::new(-3.0, 2.9, 0.0, 0.0).unwrap();
    let map = TortoiseMap::new(p).unwrap();
    let mut prev = 0.0;
    for k in 1..5000 {
        let r = k as f64 * 2e-3;
        let v = map.tortoise(r);
        assert!(v > prev);
        prev = v;
    }
}

#[test]
fn short_distance_cubic_law() {
    let p = MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap();
    let map = TortoiseMap::new(p).unwrap();
    let r = 1e-7;
    let ratio = map.tortoise(r) / r.powi(3);
    assert!((ratio - 1.0 / 12.0).abs() < 1e-7);
}

#[test]
fn fitted_power_law_on_small_window() {
    let p = MetricParams::new(2.0, 1.0, 0.0, 0.0).unwrap();
    let fit = fit_inverse_power_law(&p, 1e-12, 1e-6, 61).unwrap();
    assert!((fit.exponent - 1.0 / 3.0).abs() < 1e-5, "{fit:?}");
    assert!((fit.naive_exponent - 1.0 / 3.0).abs() < 1e-3, "{fit:?}");
    assert!((fit.prefactor / 12f64.cbrt() - 1.0).abs() < 1e-4, "{fit:?}");
}

proptest! {
    #[test]
    fn closed_form_matches_quadrature_random(q in 0.2f64..5.0, frac in 0.0f64..0.98, r in 1e-3f64..30.0) {
        let p = MetricParams::new(q, frac * q, 0.0, 0.0).unwrap();
        let map = TortoiseMap::new(p).unwrap();
        let exact = quadrature_tortoise(&p, r);
        prop_assert!((map.tortoise(r) - exact).abs() <= 1e-8 * exact.max(1e-300) + 1e-15);
    }

    #[test]
    fn inverse_round_trip_random(q in 0.2f64..5.0, frac in 0.0f64..0.98, ln_big_r in -25.0f64..8.0) {
        let p = MetricParams::new(q, frac * q, 0.0, 0.0).unwrap();
        let map = TortoiseMap::new(p).unwrap();
        let big_r = ln_big_r.exp();
        let r = map.inverse(big_r).unwrap();
        prop_assert!((map.tortoise(r) - big_r).abs() <= 1e-12 * big_r.max(1.0));
        prop_assert!(r > 0.0);
    }

    #[test]
    fn metric_factor_positive(q in 0.2f64..5.0, frac in 0.0f64..0.999, r in 1e-6f64..1e3) {
        let p = MetricParams::new(q, frac * q, 0.0, 0.0).unwrap();
        prop_assert!(metric_factor(r, &p).unwrap() > 0.0);
    }
}
