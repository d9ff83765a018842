//! Super-critical Reissner–Nordström geometry: the metric factor `A²(r)`,
//! the tortoise coordinate `R(r)` (metric distance from the singularity) and its inverse.

use serde::{Deserialize, Serialize};

use crate::numerics::{least_squares, richardson_halving};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("not super-critical: |Q| = {charge} must exceed M = {mass}")]
    NotSuperCritical { charge: f64, mass: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("tortoise coordinate must be non-negative, got {0}")]
    NegativeTortoise(f64),
    #[error("inverse tortoise did not converge for R = {target}: last r = {r}, residual {residual:e} after {iterations} iterations")]
    NoConvergence {
        target: f64,
        r: f64,
        residual: f64,
        iterations: usize,
    },
}

/// Source charge `Q`, source mass `M`, test-particle charge `q` and mass `m`
/// (units with ħ = c = G = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub source_charge: f64,
    pub source_mass: f64,
    pub charge: f64,
    pub mass: f64,
}

impl MetricParams {
    pub fn new(
        source_charge: f64,
        source_mass: f64,
        charge: f64,
        mass: f64,
    ) -> Result<Self, GeometryError> {
        let p = Self {
            source_charge,
            source_mass,
            charge,
            mass,
        };
        p.validate()?;
        Ok(p)
    }

    /// Check super-criticality `|Q| > M ≥ 0`, `m ≥ 0` and finiteness.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, value) in [
            ("Q", self.source_charge),
            ("M", self.source_mass),
            ("q", self.charge),
            ("m", self.mass),
        ] {
            if !value.is_finite() {
                return Err(GeometryError::InvalidParameter { name, value });
            }
        }
        if self.source_mass < 0.0 {
            return Err(GeometryError::InvalidParameter {
                name: "M",
                value: self.source_mass,
            });
        }
        if self.mass < 0.0 {
            return Err(GeometryError::InvalidParameter {
                name: "m",
                value: self.mass,
            });
        }
        if self.source_charge.abs() <= self.source_mass {
            return Err(GeometryError::NotSuperCritical {
                charge: self.source_charge.abs(),
                mass: self.source_mass,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn abs_charge(&self) -> f64 {
        self.source_charge.abs()
    }

    /// `A²(r)` without domain checks.
    #[inline]
    pub fn a2(&self, r: f64) -> f64 {
        let (m, q) = (self.source_mass, self.source_charge);
        1.0 - 2.0 * m / r + q * q / (r * r)
    }

    /// `r·A(r) = sqrt(r² − 2Mr + Q²)`, finite at `r = 0`.
    #[inline]
    pub fn r_a(&self, r: f64) -> f64 {
        let (m, q) = (self.source_mass, self.source_charge);
        // (r − M)² + (Q² − M²) avoids cancellation for r ≈ M.
        ((r - m) * (r - m) + (q * q - m * m)).sqrt()
    }

    /// `A(r)` for `r > 0`.
    #[inline]
    pub fn a(&self, r: f64) -> f64 {
        self.r_a(r) / r
    }

    /// `ln((r − M + rA)/(|Q| − M))`; its product with `κ` is the antiderivative of
    /// `κA/r` in the tortoise coordinate, normalized to vanish at `r = 0`.
    #[inline]
    pub fn log_factor(&self, r: f64) -> f64 {
        let m = self.source_mass;
        let qa = self.abs_charge();
        // (r − M + rA) − (|Q| − M) = r + (r² − 2Mr)/(rA + |Q|): no cancellation as r → 0.
        let excess = r + r * (r - 2.0 * m) / (self.r_a(r) + qa);
        (excess / (qa - m)).ln_1p()
    }
}

/// `A²(r) = 1 − 2M/r + Q²/r²`.
pub fn metric_factor(r: f64, params: &MetricParams) -> Result<f64, GeometryError> {
    if !(r > 0.0) {
        return Err(GeometryError::NonPositiveRadius(r));
    }
    Ok(params.a2(r))
}

const SERIES_TERMS: usize = 48;
/// Below `r = SERIES_FRACTION·|Q|` the power series in `r/|Q|` is used.
const SERIES_FRACTION: f64 = 0.25;

/// The tortoise map `r ↦ R(r)` with `dR/dr = 1/A²` and `R(0) = 0`.
#[derive(Debug, Clone)]
pub struct TortoiseMap {
    params: MetricParams,
    constant: f64,
    sqrt_disc: f64,
    atan_coeff: f64,
    // Coefficients U_n(M/|Q|)/(n+3) of the small-r series.
    series: [f64; SERIES_TERMS],
    series_cut: f64,
}

impl TortoiseMap {
    pub fn new(params: MetricParams) -> Result<Self, GeometryError> {
        params.validate()?;
        let m = params.source_mass;
        let q2 = params.source_charge * params.source_charge;
        let sqrt_disc = (q2 - m * m).sqrt();
        let atan_coeff = (2.0 * m * m - q2) / sqrt_disc;
        // Principal branch; C chosen so that the closed form vanishes at r = 0.
        let constant = atan_coeff * (m / sqrt_disc).atan();
        let mu = m / params.abs_charge();
        let mut series = [0.0; SERIES_TERMS];
        let (mut u_prev, mut u) = (0.0, 1.0); // U_{-1}, U_0
        for (n, c) in series.iter_mut().enumerate() {
            *c = u / (n as f64 + 3.0);
            let next = 2.0 * mu * u - u_prev;
            u_prev = u;
            u = next;
        }
        Ok(Self {
            params,
            constant,
            sqrt_disc,
            atan_coeff,
            series,
            series_cut: SERIES_FRACTION * params.abs_charge(),
        })
    }

    pub fn params(&self) -> &MetricParams {
        &self.params
    }

    /// Integration constant `C` of the closed form (fixed by `R(0) = 0`).
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `R(r)` for `r ≥ 0`; NaN for negative input.
    pub fn tortoise(&self, r: f64) -> f64 {
        if r < 0.0 || r.is_nan() {
            return f64::NAN;
        }
        if r <= self.series_cut {
            self.tortoise_series(r)
        } else {
            self.tortoise_closed(r)
        }
    }

    /// Closed form with log and arctan; accurate away from `r = 0`.
    pub fn tortoise_closed(&self, r: f64) -> f64 {
        let m = self.params.source_mass;
        let q2 = self.params.source_charge * self.params.source_charge;
        let log_arg = ((r - m) * (r - m) + (q2 - m * m)) / q2;
        r + m * log_arg.ln() + self.atan_coeff * ((r - m) / self.sqrt_disc).atan() + self.constant
    }

    /// Power series `|Q|·Σ U_n(μ)·x^{n+3}/(n+3)`, `x = r/|Q|`; converges for `r < |Q|`.
    pub fn tortoise_series(&self, r: f64) -> f64 {
        let qa = self.params.abs_charge();
        let x = r / qa;
        let mut acc = 0.0;
        for c in self.series.iter().rev() {
            acc = acc * x + c;
        }
        qa * x * x * x * acc
    }

    /// `dR/dr = 1/A²(r)`.
    #[inline]
    pub fn derivative(&self, r: f64) -> f64 {
        let ra = self.params.r_a(r);
        r * r / (ra * ra)
    }

    /// `r(R)` by bracketed Newton iteration.
    pub fn inverse(&self, big_r: f64) -> Result<f64, GeometryError> {
        if !(big_r >= 0.0) || !big_r.is_finite() {
            return Err(GeometryError::NegativeTortoise(big_r));
        }
        if big_r == 0.0 {
            return Ok(0.0);
        }
        let qa = self.params.abs_charge();
        let q2 = qa * qa;
        let mut r = if big_r < qa {
            (3.0 * q2 * big_r).cbrt()
        } else {
            big_r
        };
        let mut lo = 0.0;
        let mut hi = r.max(f64::MIN_POSITIVE);
        while self.tortoise(hi) < big_r {
            lo = hi;
            hi *= 2.0;
        }
        r = r.clamp(lo, hi);
        const MAX_ITER: usize = 200;
        let mut residual = f64::INFINITY;
        for it in 0..MAX_ITER {
            let f = self.tortoise(r) - big_r;
            residual = f.abs();
            if f == 0.0 {
                return Ok(r);
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let mut next = r - f / self.derivative(r);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - r).abs();
            r = next;
            if step <= 4.0 * f64::EPSILON * r || hi - lo <= 4.0 * f64::EPSILON * hi {
                let res = (self.tortoise(r) - big_r).abs();
                if res <= 1e-12 * big_r.max(1.0) {
                    return Ok(r);
                }
                return Err(GeometryError::NoConvergence {
                    target: big_r,
                    r,
                    residual: res,
                    iterations: it + 1,
                });
            }
        }
        Err(GeometryError::NoConvergence {
            target: big_r,
            r,
            residual,
            iterations: MAX_ITER,
        })
    }
}

/// Free-function form of [`TortoiseMap::tortoise`].
pub fn tortoise(r: f64, params: &MetricParams) -> Result<f64, GeometryError> {
    Ok(TortoiseMap::new(*params)?.tortoise(r))
}

/// Free-function form of [`TortoiseMap::inverse`].
pub fn inverse_tortoise(big_r: f64, params: &MetricParams) -> Result<f64, GeometryError> {
    TortoiseMap::new(*params)?.inverse(big_r)
}

/// Numerically extrapolated short-distance limits of the tortoise map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TortoiseLimits {
    /// `lim_{R→0} r(R)/R^{1/3}`; exact value `(3Q²)^{1/3}`.
    pub r_over_cbrt_r: f64,
    /// `lim_{r→0} r²A²`; exact value `Q²`.
    pub r2_a2: f64,
    /// `lim_{R→0} A²(r(R))·R^{2/3}`; exact value `Q²(3Q²)^{-2/3}`.
    pub a2_r23: f64,
    /// Richardson error estimate for `r_over_cbrt_r`.
    pub error: f64,
}

/// Evaluate on `R = R₀·8^{-k}` (so `R^{1/3}` halves each step) and extrapolate.
pub fn tortoise_asymptotics(params: &MetricParams) -> Result<TortoiseLimits, GeometryError> {
    let map = TortoiseMap::new(*params)?;
    let r0 = 1e-3 * params.abs_charge();
    let levels = 9;
    let mut f1 = Vec::with_capacity(levels);
    let mut f2 = Vec::with_capacity(levels);
    let mut f3 = Vec::with_capacity(levels);
    for k in 0..levels {
        let big_r = r0 / 8f64.powi(k as i32);
        let r = map.inverse(big_r)?;
        let ra = params.r_a(r);
        f1.push(r / big_r.cbrt());
        f2.push(ra * ra);
        f3.push(params.a2(r) * big_r.powf(2.0 / 3.0));
    }
    let (l1, e1) = richardson_halving(&f1);
    let (l2, _) = richardson_halving(&f2);
    let (l3, _) = richardson_halving(&f3);
    Ok(TortoiseLimits {
        r_over_cbrt_r: l1,
        r2_a2: l2,
        a2_r23: l3,
        error: e1,
    })
}

/// Power-law fit `r ≈ prefactor·R^exponent` on a log-spaced window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// Exponent of the plain two-parameter log–log regression (no correction term).
    pub naive_exponent: f64,
    pub samples: usize,
}

/// Fit `ln r = ln a + s·ln R + c·R^{1/3}` for `R ∈ [r_lo, r_hi]`; the `R^{1/3}` column
/// absorbs the leading correction to the pure power law.
pub fn fit_inverse_power_law(
    params: &MetricParams,
    r_lo: f64,
    r_hi: f64,
    samples: usize,
) -> Result<PowerLawFit, GeometryError> {
    let map = TortoiseMap::new(*params)?;
    let n = samples.max(4);
    let (l0, l1) = (r_lo.ln(), r_hi.ln());
    let mut rows = Vec::with_capacity(n);
    let mut plain = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let ln_big = l0 + (l1 - l0) * i as f64 / (n - 1) as f64;
        let big_r = ln_big.exp();
        let r = map.inverse(big_r)?;
        rows.push(vec![1.0, ln_big, big_r.cbrt()]);
        plain.push(vec![1.0, ln_big]);
        y.push(r.ln());
    }
    let beta = least_squares(&rows, &y).ok_or(GeometryError::InvalidParameter {
        name: "fit window",
        value: r_hi,
    })?;
    let naive = least_squares(&plain, &y).ok_or(GeometryError::InvalidParameter {
        name: "fit window",
        value: r_hi,
    })?;
    Ok(PowerLawFit {
        exponent: beta[1],
        prefactor: beta[0].exp(),
        naive_exponent: naive[1],
        samples: n,
    })
}
