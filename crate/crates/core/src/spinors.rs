//! Angular machinery in the spherical spin frame: Dirac matrices (standard
//! representation), the frame rotation `W(θ,φ)`, spherical harmonics and the
//! spinor basis `Φ±_{m_j,κ_j}` spanning each angular-momentum sector.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::numerics::gauss_legendre;

pub type Mat2 = [[Complex64; 2]; 2];
pub type Mat4 = [[Complex64; 4]; 4];
/// Four complex components in the spherical frame `(e_r, e_θ, e_φ)`.
pub type Spinor4 = [Complex64; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpinorError {
    #[error("spherical harmonic needs |m| <= l, got l = {l}, m = {m}")]
    HarmonicIndex { l: i32, m: i32 },
    #[error("not an angular sector: 2m_j = {twice_mj}, kappa = {kappa}")]
    InvalidSector { twice_mj: i32, kappa: i32 },
    #[error("operation requires kappa = ±1, got {0}")]
    KappaNotUnit(i32),
}

/// Quantum numbers `(m_j, κ_j)`; `m_j` is stored doubled so it is an exact odd integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AngularSector {
    pub twice_mj: i32,
    pub kappa: i32,
}

impl AngularSector {
    pub fn new(twice_mj: i32, kappa: i32) -> Result<Self, SpinorError> {
        let s = Self { twice_mj, kappa };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpinorError> {
        let ok = self.kappa != 0
            && self.twice_mj.rem_euclid(2) == 1
            && self.twice_mj.abs() < 2 * self.kappa.abs();
        if ok {
            Ok(())
        } else {
            Err(SpinorError::InvalidSector {
                twice_mj: self.twice_mj,
                kappa: self.kappa,
            })
        }
    }

    /// `j = |κ| − 1/2`.
    pub fn j(&self) -> f64 {
        self.kappa.abs() as f64 - 0.5
    }

    pub fn mj(&self) -> f64 {
        self.twice_mj as f64 / 2.0
    }

    /// `sgn(m_j κ_j)`.
    pub fn sign(&self) -> f64 {
        (self.twice_mj.signum() * self.kappa.signum()) as f64
    }

    /// Orbital quantum numbers of the upper (`Φ⁺`) and lower (`Φ⁻`) components.
    pub fn orbital(&self, parity: Parity) -> i32 {
        let k = self.kappa.abs();
        match (parity, self.kappa < 0) {
            (Parity::Plus, true) | (Parity::Minus, false) => k - 1,
            (Parity::Plus, false) | (Parity::Minus, true) => k,
        }
    }

    /// All sectors with `|κ| ≤ kmax`.
    pub fn enumerate(kmax: i32) -> Vec<Self> {
        let mut out = Vec::new();
        for k in 1..=kmax {
            for kappa in [-k, k] {
                for twice_mj in (-(2 * k - 1)..=(2 * k - 1)).step_by(2) {
                    out.push(Self { twice_mj, kappa });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Plus => 1.0,
            Parity::Minus => -1.0,
        }
    }
}

/// `β` and `α¹, α², α³` in the standard representation.
#[derive(Debug, Clone, Copy)]
pub struct DiracMatrices {
    pub beta: Mat4,
    pub alpha: [Mat4; 3],
}

pub fn pauli() -> [Mat2; 3] {
    [
        [[ZERO, ONE], [ONE, ZERO]],
        [[ZERO, -I], [I, ZERO]],
        [[ONE, ZERO], [ZERO, -ONE]],
    ]
}

pub fn dirac_matrices() -> DiracMatrices {
    let mut beta = [[ZERO; 4]; 4];
    for (i, row) in beta.iter_mut().enumerate() {
        row[i] = if i < 2 { ONE } else { -ONE };
    }
    let alpha = pauli().map(|s| {
        let mut a = [[ZERO; 4]; 4];
        for i in 0..2 {
            for j in 0..2 {
                a[i][j + 2] = s[i][j];
                a[i + 2][j] = s[i][j];
            }
        }
        a
    });
    DiracMatrices { beta, alpha }
}

pub fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut c = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn mat4_apply(a: &Mat4, v: &Spinor4) -> Spinor4 {
    let mut out = [ZERO; 4];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..4).map(|k| a[i][k] * v[k]).sum();
    }
    out
}

/// `⟨u, v⟩ = u†v`.
pub fn inner4(u: &Spinor4, v: &Spinor4) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr4(u: &Spinor4) -> f64 {
    u.iter().map(|a| a.norm_sqr()).sum()
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn mat2_adjoint(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

/// The unitary rotating Cartesian spin components into the spherical frame.
pub fn w_matrix(theta: f64, phi: f64) -> Mat2 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let e = |x: f64| Complex64::from_polar(s, x / 2.0);
    [
        [I * e(theta + phi), e(theta - phi)],
        [I * e(-theta + phi), -e(-theta - phi)],
    ]
}

/// Normalized spherical harmonic with the Condon–Shortley phase.
pub fn sph_harm(l: i32, m: i32, theta: f64, phi: f64) -> Result<Complex64, SpinorError> {
    if l < 0 || m.abs() > l {
        return Err(SpinorError::HarmonicIndex { l, m });
    }
    let ma = m.abs();
    let p = normalized_legendre(l, ma, theta.cos(), theta.sin());
    let y = Complex64::from_polar(p, ma as f64 * phi);
    Ok(if m >= 0 {
        y
    } else if ma % 2 == 0 {
        y.conj()
    } else {
        -y.conj()
    })
}

/// `sqrt((2l+1)/4π · (l−m)!/(l+m)!) · P_l^m(x)` (with Condon–Shortley phase), m ≥ 0.
fn normalized_legendre(l: i32, m: i32, x: f64, s: f64) -> f64 {
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= -((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mf = m as f64;
    let mut p_prev = pmm;
    let mut p = (2.0 * mf + 3.0).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b =
            (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * p - b * p_prev);
        p_prev = p;
        p = next;
    }
    p
}

/// Spherical harmonic returning zero outside `|m| ≤ l` (convenient for Clebsch sums).
fn y_or_zero(l: i32, m: i32, theta: f64, phi: f64) -> Complex64 {
    sph_harm(l, m, theta, phi).unwrap_or(ZERO)
}

/// Clebsch–Gordan weights `(c↑, c↓)` of `Y_l^{m_j−½} χ↑` and `Y_l^{m_j+½} χ↓` in the
/// two-spinor with total angular momentum `j = l ± 1/2`.
fn clebsch(l: i32, twice_j: i32, twice_mj: i32) -> (f64, f64) {
    let j = twice_j as f64 / 2.0;
    let mj = twice_mj as f64 / 2.0;
    if twice_j == 2 * l + 1 {
        (((j + mj) / (2.0 * j)).sqrt(), ((j - mj) / (2.0 * j)).sqrt())
    } else {
        (
            ((j + 1.0 - mj) / (2.0 * j + 2.0)).sqrt(),
            -((j + 1.0 + mj) / (2.0 * j + 2.0)).sqrt(),
        )
    }
}

/// The two-spinor `Ψ^{m_j}_{l}` in the spherical frame (columns of `W` as spin basis).
pub fn two_spinor(l: i32, twice_j: i32, twice_mj: i32, theta: f64, phi: f64) -> [Complex64; 2] {
    let (cu, cd) = clebsch(l, twice_j, twice_mj);
    let yu = y_or_zero(l, (twice_mj - 1) / 2, theta, phi) * cu;
    let yd = y_or_zero(l, (twice_mj + 1) / 2, theta, phi) * cd;
    let w = w_matrix(theta, phi);
    [yu * w[0][0] + yd * w[0][1], yu * w[1][0] + yd * w[1][1]]
}

/// `Φ±_{m_j,κ_j}(θ, φ)`: `Φ⁺ = (iΨ, 0)`, `Φ⁻ = (0, Ψ)`.
pub fn phi_basis(
    sector: AngularSector,
    parity: Parity,
    theta: f64,
    phi: f64,
) -> Result<Spinor4, SpinorError> {
    sector.validate()?;
    let l = sector.orbital(parity);
    let twice_j = 2 * sector.kappa.abs() - 1;
    let psi = two_spinor(l, twice_j, sector.twice_mj, theta, phi);
    Ok(match parity {
        Parity::Plus => [I * psi[0], I * psi[1], ZERO, ZERO],
        Parity::Minus => [ZERO, ZERO, psi[0], psi[1]],
    })
}

/// `(⟨Φ⁺, α¹Φ⁻⟩, ⟨Φ⁺, α²Φ⁻⟩, ⟨Φ⁺, α³Φ⁻⟩)` at a point; requires `κ = ±1`.
pub fn alpha_matrix_elements(
    sector: AngularSector,
    theta: f64,
    phi: f64,
) -> Result<[Complex64; 3], SpinorError> {
    if sector.kappa.abs() != 1 {
        return Err(SpinorError::KappaNotUnit(sector.kappa));
    }
    let plus = phi_basis(sector, Parity::Plus, theta, phi)?;
    let minus = phi_basis(sector, Parity::Minus, theta, phi)?;
    let d = dirac_matrices();
    Ok(d.alpha.map(|a| inner4(&plus, &mat4_apply(&a, &minus))))
}

/// Product quadrature on the sphere: Gauss–Legendre in `cos θ`, trapezoid in `φ`.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub points: Vec<(f64, f64, f64)>,
}

impl SphereQuadrature {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let (x, w) = gauss_legendre(n_theta);
        let mut points = Vec::with_capacity(n_theta * n_phi);
        for (xi, wi) in x.iter().zip(&w) {
            let theta = xi.acos();
            for k in 0..n_phi {
                let phi = 2.0 * PI * k as f64 / n_phi as f64;
                points.push((theta, phi, wi * 2.0 * PI / n_phi as f64));
            }
        }
        Self { points }
    }

    /// `∫ f dω`.
    pub fn integrate<F: FnMut(f64, f64) -> Complex64>(&self, mut f: F) -> Complex64 {
        self.points.iter().map(|&(t, p, w)| f(t, p) * w).sum()
    }
}

/// Residuals of the joint eigenrelations for one basis spinor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub sector: AngularSector,
    pub parity: Parity,
    /// `‖J²Φ − j(j+1)Φ‖`.
    pub j2: f64,
    /// `‖J₃Φ − m_jΦ‖`.
    pub j3: f64,
    /// `‖β(2S·L + 1)Φ + κΦ‖` (the spin-orbit operator has eigenvalue `−κ` in this labeling).
    pub spin_orbit: f64,
    /// `‖βΦ − (±1)Φ‖`.
    pub beta: f64,
    /// Pointwise residual of `(−α²(∂_θ + ½cot θ) − α³(sin θ)⁻¹∂_φ)Φ = κγ¹Φ`.
    pub angular_dirac: f64,
    /// Norm not captured by the truncated harmonic expansion (should be ~0).
    pub leakage: f64,
}

impl EigenReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.j2,
            self.j3,
            self.spin_orbit,
            self.beta,
            self.angular_dirac,
            self.leakage,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Expansion coefficients `c[comp][l][m+l][s]` of the Cartesian-frame 4-spinor on
/// `Y_l^m ⊗ χ_s`, `comp` ∈ {upper, lower}, `s` ∈ {↑, ↓}.
type Expansion = Vec<Vec<Vec<[Complex64; 2]>>>;

fn cartesian_expansion(
    sector: AngularSector,
    parity: Parity,
    lmax: i32,
    quad: &SphereQuadrature,
) -> Expansion {
    let mut c: Expansion = (0..2)
        .map(|_| {
            (0..=lmax)
                .map(|l| vec![[ZERO; 2]; (2 * l + 1) as usize])
                .collect()
        })
        .collect();
    for &(theta, phi, w) in &quad.points {
        let f = phi_basis(sector, parity, theta, phi).expect("valid sector");
        let wm = mat2_adjoint(&w_matrix(theta, phi));
        // Cartesian components: W† applied to each 2-spinor block.
        let up = [
            wm[0][0] * f[0] + wm[0][1] * f[1],
            wm[1][0] * f[0] + wm[1][1] * f[1],
        ];
        let lo = [
            wm[0][0] * f[2] + wm[0][1] * f[3],
            wm[1][0] * f[2] + wm[1][1] * f[3],
        ];
        for (comp, v) in [up, lo].iter().enumerate() {
            for l in 0..=lmax {
                for m in -l..=l {
                    let y = y_or_zero(l, m, theta, phi).conj() * w;
                    let cell = &mut c[comp][l as usize][(m + l) as usize];
                    cell[0] += y * v[0];
                    cell[1] += y * v[1];
                }
            }
        }
    }
    c
}

/// Apply `L·σ` (= 2 S·L) to an expansion block of fixed `l`.
fn l_dot_sigma(l: i32, block: &[[Complex64; 2]]) -> Vec<[Complex64; 2]> {
    let lf = l as f64;
    let mut out = vec![[ZERO; 2]; block.len()];
    for m in -l..=l {
        let idx = (m + l) as usize;
        let mf = m as f64;
        // L_z σ_z
        out[idx][0] += block[idx][0] * mf;
        out[idx][1] -= block[idx][1] * mf;
        // L₊σ₋ + L₋σ₊: σ₋ maps ↑→↓, σ₊ maps ↓→↑.
        if m < l {
            let cp = (lf * (lf + 1.0) - mf * (mf + 1.0)).sqrt();
            // L₊ Y_m χ↑ ⊗ σ₋ → Y_{m+1} χ↓
            out[idx + 1][1] += block[idx][0] * cp;
        }
        if m > -l {
            let cm = (lf * (lf + 1.0) - mf * (mf - 1.0)).sqrt();
            // L₋ Y_m χ↓ ⊗ σ₊ → Y_{m−1} χ↑
            out[idx - 1][0] += block[idx][1] * cm;
        }
    }
    out
}

/// Project `Φ±` onto harmonics in the Cartesian spin frame and apply `J², J₃`, the
/// spin-orbit operator and `β` exactly there; also check the angular Dirac identity
/// pointwise with fourth-order finite differences.
pub fn angular_eigenchecks(
    sector: AngularSector,
    parity: Parity,
) -> Result<EigenReport, SpinorError> {
    sector.validate()?;
    let lmax = sector.kappa.abs() + 1;
    let quad = SphereQuadrature::new((2 * lmax + 4) as usize, (4 * lmax + 6) as usize);
    let c = cartesian_expansion(sector, parity, lmax, &quad);
    let j = sector.j();
    let mj = sector.mj();
    let beta_sign = parity.sign();
    let (mut captured, mut r_j2, mut r_j3, mut r_k, mut r_beta) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for comp in 0..2 {
        let bsign = if comp == 0 { 1.0 } else { -1.0 };
        for l in 0..=lmax {
            let block = &c[comp][l as usize];
            let ls = l_dot_sigma(l, block);
            let lf = l as f64;
            for m in -l..=l {
                let idx = (m + l) as usize;
                for s in 0..2 {
                    let v = block[idx][s];
                    captured += v.norm_sqr();
                    let sz = if s == 0 { 0.5 } else { -0.5 };
                    // J² = L² + L·σ + 3/4
                    let j2 = v * (lf * (lf + 1.0) + 0.75) + ls[idx][s];
                    r_j2 += (j2 - v * (j * (j + 1.0))).norm_sqr();
                    r_j3 += (v * (m as f64 + sz) - v * mj).norm_sqr();
                    let k = (ls[idx][s] + v) * bsign;
                    r_k += (k + v * sector.kappa as f64).norm_sqr();
                    r_beta += (v * bsign - v * beta_sign).norm_sqr();
                }
            }
        }
    }
    Ok(EigenReport {
        sector,
        parity,
        j2: r_j2.sqrt(),
        j3: r_j3.sqrt(),
        spin_orbit: r_k.sqrt(),
        beta: r_beta.sqrt(),
        angular_dirac: angular_dirac_residual(sector, parity),
        leakage: (1.0 - captured).abs(),
    })
}

/// Max pointwise residual of `−α²(∂_θ + ½cot θ)Φ − α³(sin θ)⁻¹∂_φΦ − κγ¹Φ` at a fixed set of angles.
fn angular_dirac_residual(sector: AngularSector, parity: Parity) -> f64 {
    let d = dirac_matrices();
    let gamma1 = mat4_mul(&d.beta, &d.alpha[0]);
    let f = |t: f64, p: f64| phi_basis(sector, parity, t, p).expect("valid sector");
    let h = 1e-3;
    let diff = |g: &dyn Fn(f64) -> Spinor4| -> Spinor4 {
        let (a, b, c, e) = (g(-2.0 * h), g(-h), g(h), g(2.0 * h));
        let mut out = [ZERO; 4];
        for i in 0..4 {
            out[i] = (a[i] - e[i] + (c[i] - b[i]) * 8.0) / (12.0 * h);
        }
        out
    };
    let mut worst: f64 = 0.0;
    for &(theta, phi) in &[(0.3, 0.2), (0.9, 2.1), (1.57, 4.0), (2.5, 5.9), (2.9, 1.0)] {
        let v = f(theta, phi);
        let dth = diff(&|e| f(theta + e, phi));
        let dph = diff(&|e| f(theta, phi + e));
        let mut conn = [ZERO; 4];
        for i in 0..4 {
            conn[i] = dth[i] + v[i] * (0.5 / theta.tan());
        }
        let a2 = mat4_apply(&d.alpha[1], &conn);
        let a3 = mat4_apply(&d.alpha[2], &dph);
        let g = mat4_apply(&gamma1, &v);
        for i in 0..4 {
            let r = -a2[i] - a3[i] / theta.sin() - g[i] * sector.kappa as f64;
            worst = worst.max(r.norm());
        }
    }
    worst
}
