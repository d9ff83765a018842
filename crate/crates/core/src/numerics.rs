//! Small numerical helpers shared by the physics modules: least squares,
//! Gauss–Legendre nodes, Richardson extrapolation, a complex tridiagonal
//! factorization and monotone cubic (PCHIP) interpolation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Solve the overdetermined system `rows · β ≈ y` in the least-squares sense.
///
/// Returns `None` when the design matrix is rank deficient.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len();
    let p = rows.first()?.len();
    if n < p || y.len() != n {
        return None;
    }
    let a = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.min() <= smax * 1e-13 {
        return None;
    }
    let x = svd.solve(&b, smax * 1e-14).ok()?;
    Some(x.iter().copied().collect())
}

/// Ordinary straight-line fit `y = intercept + slope·x`. Returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let rows: Vec<Vec<f64>> = x.iter().map(|&xi| vec![1.0, xi]).collect();
    let beta = least_squares(&rows, y)?;
    Some((beta[1], beta[0]))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Richardson extrapolation of samples `f(h_k)` with `h_k = h_0 / 2^k`, assuming
/// an error expansion in integer powers of `h`. Returns the most refined value and
/// the difference to the previous diagonal entry as an error estimate.
pub fn richardson_halving(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    assert!(n > 0, "richardson: no samples");
    let mut table: Vec<Vec<f64>> = vec![samples.to_vec()];
    for j in 1..n {
        let prev = &table[j - 1];
        let factor = (1u64 << j) as f64 - 1.0;
        let next: Vec<f64> = (1..prev.len())
            .map(|k| prev[k] + (prev[k] - prev[k - 1]) / factor)
            .collect();
        table.push(next);
    }
    let best = table[n - 1][0];
    let err = if n > 1 {
        (best - table[n - 2][table[n - 2].len() - 1]).abs()
    } else {
        f64::INFINITY
    };
    (best, err)
}

/// LU factorization (no pivoting) of a complex tridiagonal matrix.
///
/// Safe without pivoting for the accretive matrices `I + i·τ·H` with Hermitian `H`.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<Complex64>,
    diag_inv: Vec<Complex64>,
    upper: Vec<Complex64>,
}

impl TridiagonalLu {
    /// `sub[i]` is entry (i+1, i); `sup[i]` is entry (i, i+1).
    pub fn new(sub: &[Complex64], diag: &[Complex64], sup: &[Complex64]) -> Option<Self> {
        let n = diag.len();
        if sub.len() + 1 != n || sup.len() + 1 != n {
            return None;
        }
        let mut lower = vec![Complex64::new(0.0, 0.0); n.saturating_sub(1)];
        let mut diag_inv = vec![Complex64::new(0.0, 0.0); n];
        let mut d = diag[0];
        if d.norm() == 0.0 {
            return None;
        }
        diag_inv[0] = d.inv();
        for i in 1..n {
            let l = sub[i - 1] * diag_inv[i - 1];
            lower[i - 1] = l;
            d = diag[i] - l * sup[i - 1];
            if d.norm() == 0.0 || !d.re.is_finite() {
                return None;
            }
            diag_inv[i] = d.inv();
        }
        Some(Self {
            lower,
            diag_inv,
            upper: sup.to_vec(),
        })
    }

    /// Solve in place.
    pub fn solve(&self, x: &mut [Complex64]) {
        let n = self.diag_inv.len();
        for i in 1..n {
            let l = self.lower[i - 1];
            let prev = x[i - 1];
            x[i] -= l * prev;
        }
        x[n - 1] *= self.diag_inv[n - 1];
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] = (x[i] - self.upper[i] * next) * self.diag_inv[i];
        }
    }
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
    /// `(x[1], 1/h)` when the knots from `x[1]` on are uniformly spaced (direct lookup).
    uniform: Option<(f64, f64)>,
}

impl Pchip {
    /// `x` strictly increasing, at least two points.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        assert!(
            x.len() >= 2 && x.len() == y.len(),
            "pchip: need >= 2 matching points"
        );
        let n = x.len();
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        let uniform = (n >= 3)
            .then(|| (x[1], x[2] - x[1]))
            .filter(|&(x1, h)| (1..n).all(|i| (x[i] - (x1 + (i - 1) as f64 * h)).abs() <= 1e-12 * h * n as f64))
            .map(|(x1, h)| (x1, 1.0 / h));
        Self { x, y, d, uniform }
    }

    /// Evaluate; outside the knot range the end cubic is extended.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.interval(t);
        self.eval_in(i, t)
    }

    /// Evaluate with a known interval index (`x[i] <= t <= x[i+1]`).
    #[inline]
    pub fn eval_in(&self, i: usize, t: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    /// Index `i` of the knot interval containing `t` (clamped to the end intervals).
    pub fn locate(&self, t: f64) -> usize {
        self.interval(t)
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        if let Some((x1, inv_h)) = self.uniform {
            if t < x1 {
                return 0;
            }
            let mut i = (1 + ((t - x1) * inv_h) as usize).min(n - 2);
            while i > 1 && self.x[i] > t {
                i -= 1;
            }
            while i + 2 < n && self.x[i + 1] <= t {
                i += 1;
            }
            return i;
        }
        match self
            .x
            .binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

/// Complex-valued PCHIP: real and imaginary parts interpolated independently on shared knots.
#[derive(Debug, Clone)]
pub struct ComplexPchip {
    re: Pchip,
    im: Pchip,
}

impl ComplexPchip {
    pub fn new(x: Vec<f64>, y: &[Complex64]) -> Self {
        let re = Pchip::new(x.clone(), y.iter().map(|c| c.re).collect());
        let im = Pchip::new(x, y.iter().map(|c| c.im).collect());
        Self { re, im }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> Complex64 {
        let i = self.re.locate(t);
        Complex64::new(self.re.eval_in(i, t), self.im.eval_in(i, t))
    }

    pub fn knots(&self) -> &[f64] {
        self.re.knots()
    }
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= 0.0 {
        0.0
    } else if del0 * del1 <= 0.0 && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}
