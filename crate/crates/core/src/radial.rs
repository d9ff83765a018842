//! The IBC Hamiltonian of one angular sector on the mini-Fock space ℂ ⊕ L²((0,∞), ℂ²),
//! discretized in the tortoise coordinate `R`.
//!
//! The radial operator is `h = [[v₊, −∂_R + u], [∂_R + u, v₋]]` with `u = κA/r` and
//! `v± = qQ/r ± mA`. Writing `η = ∫u dR`, the off-diagonal entries factor as
//! `−e^{η}∂_R e^{−η}` and `e^{−η}∂_R e^{η}`; the scheme differences the smooth combinations
//! `e^{∓η}φ∓` on a staggered grid, which keeps the `R^{-2/3}` singularity of `u` exact.
//!
//! One component lives on half nodes `(k+½)ΔR`, `k = 0..N`, the other on whole nodes
//! `(k+1)ΔR`, `k = 0..N−1`, with a hard wall at `R_max = NΔR`. The boundary value of the
//! whole-node component at `R = 0` is a ghost eliminated through the IBC; the resulting
//! rows and the 0-particle row form an exactly Hermitian matrix.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, MetricParams, TortoiseMap};
use crate::numerics::{least_squares, TridiagonalLu};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, thiserror::Error)]
pub enum RadialError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("IBC parameters need a1*a4 - a2*a3 = 1, got {0}")]
    Determinant(f64),
    #[error("coupling constant g must be nonzero")]
    ZeroCoupling,
    #[error("invalid grid: dR = {dr}, N = {n}")]
    Grid { dr: f64, n: usize },
    #[error("state does not match grid: expected {expected} nodes, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("linear solve failed in Cayley step (dt = {dt})")]
    Solve { dt: f64 },
    #[error("boundary mass {mass:e} beyond 0.9 R_max exceeds tolerance {tol:e}")]
    BoundaryMass { mass: f64, tol: f64 },
    #[error("snapshot parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform staggered grid with spacing `dr` and `n` half nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub dr: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn new(dr: f64, n: usize) -> Result<Self, RadialError> {
        if !(dr > 0.0 && dr.is_finite()) || n < 4 {
            return Err(RadialError::Grid { dr, n });
        }
        Ok(Self { dr, n })
    }

    #[inline]
    pub fn half_node(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dr
    }

    #[inline]
    pub fn whole_node(&self, k: usize) -> f64 {
        (k as f64 + 1.0) * self.dr
    }

    pub fn r_max(&self) -> f64 {
        self.n as f64 * self.dr
    }

    /// Dimension of the assembled operator: Ψ⁰, N half-node and N−1 whole-node values.
    pub fn dim(&self) -> usize {
        2 * self.n
    }
}

/// Which component occupies the whole nodes (and thus carries the boundary ghost).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `φ₋` on whole nodes, `φ₊` on half nodes; ghost is `φ₋(0)`.
    MinusOnWhole,
    /// `φ₊` on whole nodes, `φ₋` on half nodes; ghost is `φ₊(0)`.
    PlusOnWhole,
}

/// Interior-boundary condition `a₁c₋ + a₂c₊ = gΨ⁰`, `(HΨ)⁰ = g*(a₃c₋ + a₄c₊)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbcParams {
    pub a: [f64; 4],
    pub g: Complex64,
}

impl IbcParams {
    pub fn new(a: [f64; 4], g: Complex64) -> Result<Self, RadialError> {
        let p = Self { a, g };
        p.validate()?;
        Ok(p)
    }

    /// `a₁ = a₄ = 1`, `a₂ = a₃ = 0`.
    pub fn simple(g: Complex64) -> Result<Self, RadialError> {
        Self::new([1.0, 0.0, 0.0, 1.0], g)
    }

    pub fn validate(&self) -> Result<(), RadialError> {
        let det = self.a[0] * self.a[3] - self.a[1] * self.a[2];
        if (det - 1.0).abs() > 1e-12 || self.a.iter().any(|v| !v.is_finite()) {
            return Err(RadialError::Determinant(det));
        }
        if self.g.norm() == 0.0 || !self.g.norm().is_finite() {
            return Err(RadialError::ZeroCoupling);
        }
        Ok(())
    }
}

/// Boundary condition of one sector at `R = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectorBoundary {
    /// Coupled to the 0-particle sector.
    Ibc(IbcParams),
    /// Decoupled self-adjoint extension `φ₊(0) sin θ + φ₋(0) cos θ = 0`.
    Extension { theta: f64 },
}

impl SectorBoundary {
    pub fn layout(&self) -> Layout {
        match self {
            SectorBoundary::Ibc(p) if p.a[0].abs() >= p.a[1].abs() => Layout::MinusOnWhole,
            SectorBoundary::Ibc(_) => Layout::PlusOnWhole,
            SectorBoundary::Extension { theta } if theta.cos().abs() >= theta.sin().abs() => {
                Layout::MinusOnWhole
            }
            SectorBoundary::Extension { .. } => Layout::PlusOnWhole,
        }
    }

    pub fn is_coupled(&self) -> bool {
        matches!(self, SectorBoundary::Ibc(_))
    }
}

/// Everything defining the continuum problem of one sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSetup {
    pub metric: MetricParams,
    pub kappa: i32,
    pub twice_mj: i32,
    pub boundary: SectorBoundary,
}

/// Potentials and gauge exponent at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTerms {
    pub big_r: f64,
    pub r: f64,
    /// `u = κA/r`.
    pub u: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    /// `η(R) = ∫₀^R u`.
    pub eta: f64,
}

impl NodeTerms {
    pub fn at(map: &TortoiseMap, kappa: i32, big_r: f64) -> Result<Self, RadialError> {
        let r = map.inverse(big_r)?;
        Ok(Self::at_radius(map.params(), kappa, r, big_r))
    }

    pub fn at_radius(p: &MetricParams, kappa: i32, r: f64, big_r: f64) -> Self {
        let a = p.a(r);
        let coulomb = p.charge * p.source_charge / r;
        Self {
            big_r,
            r,
            u: kappa as f64 * a / r,
            v_plus: coulomb + p.mass * a,
            v_minus: coulomb - p.mass * a,
            eta: kappa as f64 * p.log_factor(r),
        }
    }
}

/// Node-wise potential terms on the staggered grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialTerms {
    pub half: Vec<NodeTerms>,
    pub whole: Vec<NodeTerms>,
}

impl PotentialTerms {
    pub fn new(metric: &MetricParams, kappa: i32, grid: &RadialGrid) -> Result<Self, RadialError> {
        let map = TortoiseMap::new(*metric)?;
        let half = (0..grid.n)
            .map(|k| NodeTerms::at(&map, kappa, grid.half_node(k)))
            .collect::<Result<_, _>>()?;
        let whole = (0..grid.n - 1)
            .map(|k| NodeTerms::at(&map, kappa, grid.whole_node(k)))
            .collect::<Result<_, _>>()?;
        Ok(Self { half, whole })
    }
}

/// Ψ⁰ plus the two radial components on their nodes. `half` has N entries, `whole` N−1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniFockState {
    pub psi0: Complex64,
    pub half: Vec<Complex64>,
    pub whole: Vec<Complex64>,
    pub layout: Layout,
}

impl MiniFockState {
    pub fn vacuum(grid: &RadialGrid, layout: Layout) -> Self {
        Self {
            psi0: Complex64::new(1.0, 0.0),
            half: vec![ZERO; grid.n],
            whole: vec![ZERO; grid.n - 1],
            layout,
        }
    }

    /// Sample `(φ₊, φ₋)(R)` on the grid; `psi0` is the 0-particle amplitude.
    pub fn from_fn<F: Fn(f64) -> (Complex64, Complex64)>(
        grid: &RadialGrid,
        layout: Layout,
        psi0: Complex64,
        f: F,
    ) -> Self {
        let pick = |big_r: f64, on_whole: bool| {
            let (p, m) = f(big_r);
            match (layout, on_whole) {
                (Layout::MinusOnWhole, true) | (Layout::PlusOnWhole, false) => m,
                _ => p,
            }
        };
        Self {
            psi0,
            half: (0..grid.n)
                .map(|k| pick(grid.half_node(k), false))
                .collect(),
            whole: (0..grid.n - 1)
                .map(|k| pick(grid.whole_node(k), true))
                .collect(),
            layout,
        }
    }

    /// Normalized Gaussian bump `(φ₊, φ₋) = (w₊, w₋)·exp(−((R−R₀)/σ)²)` with no vacuum amplitude.
    pub fn gaussian(
        op: &RadialHamiltonian,
        center: f64,
        width: f64,
        weights: (Complex64, Complex64),
    ) -> Self {
        let mut s = Self::from_fn(&op.grid, op.layout, ZERO, |big_r| {
            let e = (-((big_r - center) / width).powi(2)).exp();
            (weights.0 * e, weights.1 * e)
        });
        s.normalize(&op.grid);
        s
    }

    /// Normalized near-boundary profile `φ₊ = c₊e^{−η}F(R)`, `φ₋ = c₋e^{η}F(R)` with
    /// `F = exp(−(R/σ)²)`, and `Ψ⁰` chosen so that the IBC holds (zero for a decoupled sector).
    pub fn boundary_profile(
        op: &RadialHamiltonian,
        c_minus: Complex64,
        c_plus: Complex64,
        width: f64,
    ) -> Self {
        let psi0 = match &op.setup.boundary {
            SectorBoundary::Ibc(p) => (c_minus * p.a[0] + c_plus * p.a[1]) / p.g,
            SectorBoundary::Extension { .. } => ZERO,
        };
        let mut s = Self {
            psi0,
            half: Vec::with_capacity(op.grid.n),
            whole: Vec::with_capacity(op.grid.n - 1),
            layout: op.layout,
        };
        let val = |t: &NodeTerms, plus: bool| {
            let f = (-(t.big_r / width).powi(2)).exp();
            if plus {
                c_plus * (-t.eta).exp() * f
            } else {
                c_minus * t.eta.exp() * f
            }
        };
        let half_is_plus = op.layout == Layout::MinusOnWhole;
        s.half = op.terms.half.iter().map(|t| val(t, half_is_plus)).collect();
        s.whole = op
            .terms
            .whole
            .iter()
            .map(|t| val(t, !half_is_plus))
            .collect();
        s.normalize(&op.grid);
        s
    }

    pub fn check(&self, grid: &RadialGrid) -> Result<(), RadialError> {
        if self.half.len() != grid.n {
            return Err(RadialError::Shape {
                expected: grid.n,
                got: self.half.len(),
            });
        }
        if self.whole.len() + 1 != grid.n {
            return Err(RadialError::Shape {
                expected: grid.n - 1,
                got: self.whole.len(),
            });
        }
        Ok(())
    }

    /// `φ₊` values and their node positions.
    pub fn plus(&self, grid: &RadialGrid) -> (Vec<f64>, &[Complex64]) {
        match self.layout {
            Layout::MinusOnWhole => ((0..grid.n).map(|k| grid.half_node(k)).collect(), &self.half),
            Layout::PlusOnWhole => (
                (0..grid.n - 1).map(|k| grid.whole_node(k)).collect(),
                &self.whole,
            ),
        }
    }

    /// `φ₋` values and their node positions.
    pub fn minus(&self, grid: &RadialGrid) -> (Vec<f64>, &[Complex64]) {
        match self.layout {
            Layout::MinusOnWhole => (
                (0..grid.n - 1).map(|k| grid.whole_node(k)).collect(),
                &self.whole,
            ),
            Layout::PlusOnWhole => ((0..grid.n).map(|k| grid.half_node(k)).collect(), &self.half),
        }
    }

    /// `ΔR·Σ(|φ₊|² + |φ₋|²)`.
    pub fn particle_norm(&self, grid: &RadialGrid) -> f64 {
        grid.dr
            * (self
                .half
                .iter()
                .chain(&self.whole)
                .map(|c| c.norm_sqr())
                .sum::<f64>())
    }

    pub fn total_norm(&self, grid: &RadialGrid) -> f64 {
        self.psi0.norm_sqr() + self.particle_norm(grid)
    }

    /// Probability beyond `frac·R_max`.
    pub fn boundary_mass(&self, grid: &RadialGrid, frac: f64) -> f64 {
        let cut = frac * grid.r_max();
        let h: f64 = (0..grid.n)
            .filter(|&k| grid.half_node(k) > cut)
            .map(|k| self.half[k].norm_sqr())
            .sum();
        let w: f64 = (0..grid.n - 1)
            .filter(|&k| grid.whole_node(k) > cut)
            .map(|k| self.whole[k].norm_sqr())
            .sum();
        grid.dr * (h + w)
    }

    /// Rescale to unit total norm.
    pub fn normalize(&mut self, grid: &RadialGrid) {
        let n = self.total_norm(grid).sqrt();
        if n > 0.0 {
            self.psi0 /= n;
            self.half
                .iter_mut()
                .chain(self.whole.iter_mut())
                .for_each(|c| *c /= n);
        }
    }

    /// Flatten into the symmetric coordinates `[Ψ⁰, √ΔR·b₀, √ΔR·a₀, √ΔR·b₁, …]`.
    pub fn to_scaled(&self, grid: &RadialGrid) -> Vec<Complex64> {
        let s = grid.dr.sqrt();
        let mut y = vec![ZERO; grid.dim()];
        y[0] = self.psi0;
        for k in 0..grid.n {
            y[1 + 2 * k] = self.half[k] * s;
            if k + 1 < grid.n {
                y[2 + 2 * k] = self.whole[k] * s;
            }
        }
        y
    }

    pub fn from_scaled(y: &[Complex64], grid: &RadialGrid, layout: Layout) -> Self {
        let s = 1.0 / grid.dr.sqrt();
        Self {
            psi0: y[0],
            half: (0..grid.n).map(|k| y[1 + 2 * k] * s).collect(),
            whole: (0..grid.n - 1).map(|k| y[2 + 2 * k] * s).collect(),
            layout,
        }
    }
}

/// Boundary values `(c₋, c₊)` at `R = 0` with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    /// `c₋` from the fit `c + b·R^{1/3}` on the innermost nodes.
    pub c_minus: Complex64,
    pub c_plus: Complex64,
    /// Max fit residuals (one spare degree of freedom per component).
    pub err_minus: f64,
    pub err_plus: f64,
    /// Values implied by the discrete boundary closure (ghost and gauge-corrected first node).
    /// These satisfy the IBC exactly and give `d|Ψ⁰|²/dt = 2 Im(c₋* c₊)` for the semi-discrete flow.
    pub scheme_minus: Complex64,
    pub scheme_plus: Complex64,
    /// Set when a fit residual exceeds 5% of the fitted magnitude.
    pub warning: bool,
}

impl BoundaryData {
    pub fn im_product(&self) -> f64 {
        (self.scheme_minus.conj() * self.scheme_plus).im
    }
}

/// The assembled sector operator in symmetric coordinates (a Hermitian tridiagonal matrix).
#[derive(Debug, Clone)]
pub struct RadialHamiltonian {
    pub grid: RadialGrid,
    pub setup: SectorSetup,
    pub layout: Layout,
    pub terms: PotentialTerms,
    /// Real diagonal.
    pub diag: Vec<f64>,
    /// `sup[i]` = entry `(i, i+1)`; entry `(i+1, i)` is its conjugate.
    pub sup: Vec<Complex64>,
    /// Gauge factor relating the first half-node value to its boundary value.
    lambda: f64,
}

impl RadialHamiltonian {
    pub fn new(setup: SectorSetup, grid: RadialGrid) -> Result<Self, RadialError> {
        setup.metric.validate()?;
        if let SectorBoundary::Ibc(p) = &setup.boundary {
            p.validate()?;
        }
        let terms = PotentialTerms::new(&setup.metric, setup.kappa, &grid)?;
        let layout = setup.boundary.layout();
        let n = grid.n;
        let dr = grid.dr;
        let mut diag = vec![0.0; grid.dim()];
        let mut sup = vec![ZERO; grid.dim() - 1];
        let (h, w) = (&terms.half, &terms.whole);
        // Gauge sign: the half-node component is e^{∓η}-smooth.
        let sigma = match layout {
            Layout::MinusOnWhole => 1.0,
            Layout::PlusOnWhole => -1.0,
        };
        for k in 0..n {
            diag[1 + 2 * k] = match layout {
                Layout::MinusOnWhole => h[k].v_plus,
                Layout::PlusOnWhole => h[k].v_minus,
            };
            if k + 1 < n {
                diag[2 + 2 * k] = match layout {
                    Layout::MinusOnWhole => w[k].v_minus,
                    Layout::PlusOnWhole => w[k].v_plus,
                };
                // (b_k, a_k) and (a_k, b_{k+1}).
                sup[1 + 2 * k] =
                    Complex64::from(-sigma * (sigma * (h[k].eta - w[k].eta)).exp() / dr);
                sup[2 + 2 * k] =
                    Complex64::from(sigma * (sigma * (h[k + 1].eta - w[k].eta)).exp() / dr);
            }
        }
        let lambda = (sigma * h[0].eta).exp();
        let sq = dr.sqrt();
        match (&setup.boundary, layout) {
            (SectorBoundary::Ibc(p), Layout::MinusOnWhole) => {
                let [a1, a2, a3, _] = p.a;
                diag[1] -= a2 * lambda * lambda / (a1 * dr);
                diag[0] = p.g.norm_sqr() * a3 / a1;
                sup[0] = p.g.conj() * (lambda / (a1 * sq));
            }
            (SectorBoundary::Ibc(p), Layout::PlusOnWhole) => {
                let [a1, a2, _, a4] = p.a;
                diag[1] += a1 * lambda * lambda / (a2 * dr);
                diag[0] = p.g.norm_sqr() * a4 / a2;
                sup[0] = -p.g.conj() * (lambda / (a2 * sq));
            }
            (SectorBoundary::Extension { theta }, Layout::MinusOnWhole) => {
                diag[1] -= theta.tan() * lambda * lambda / dr;
            }
            (SectorBoundary::Extension { theta }, Layout::PlusOnWhole) => {
                diag[1] += lambda * lambda / (theta.tan() * dr);
            }
        }
        Ok(Self {
            grid,
            setup,
            layout,
            terms,
            diag,
            sup,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `H·y` in symmetric coordinates.
    pub fn apply_scaled(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        let mut out = vec![ZERO; n];
        for i in 0..n {
            let mut acc = y[i] * self.diag[i];
            if i + 1 < n {
                acc += self.sup[i] * y[i + 1];
            }
            if i > 0 {
                acc += self.sup[i - 1].conj() * y[i - 1];
            }
            out[i] = acc;
        }
        out
    }

    /// Apply the discretized reduced Hamiltonian (including the IBC rows) to a state.
    pub fn apply(&self, state: &MiniFockState) -> Result<MiniFockState, RadialError> {
        state.check(&self.grid)?;
        let y = self.apply_scaled(&state.to_scaled(&self.grid));
        Ok(MiniFockState::from_scaled(&y, &self.grid, self.layout))
    }

    /// Dense copy of the symmetric-coordinate matrix.
    pub fn dense(&self) -> DMatrix<Complex64> {
        let n = self.dim();
        let mut m = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            m[(i, i)] = Complex64::from(self.diag[i]);
            if i + 1 < n {
                m[(i, i + 1)] = self.sup[i];
                m[(i + 1, i)] = self.sup[i].conj();
            }
        }
        m
    }

    /// Ghost value and gauge-corrected first node: `(c₋, c₊)` implied by the discrete closure.
    pub fn scheme_boundary(&self, state: &MiniFockState) -> (Complex64, Complex64) {
        let first = state.half[0] * self.lambda;
        let ghost = match (&self.setup.boundary, self.layout) {
            (SectorBoundary::Ibc(p), Layout::MinusOnWhole) => {
                (p.g * state.psi0 - first * p.a[1]) / p.a[0]
            }
            (SectorBoundary::Ibc(p), Layout::PlusOnWhole) => {
                (p.g * state.psi0 - first * p.a[0]) / p.a[1]
            }
            (SectorBoundary::Extension { theta }, Layout::MinusOnWhole) => -first * theta.tan(),
            (SectorBoundary::Extension { theta }, Layout::PlusOnWhole) => -first / theta.tan(),
        };
        match self.layout {
            Layout::MinusOnWhole => (ghost, first),
            Layout::PlusOnWhole => (first, ghost),
        }
    }

    /// The gauge factor `e^{±η(ΔR/2)}` at the first half node.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Apply the discretized sector Hamiltonian to a state.
pub fn reduced_hamiltonian_apply(
    state: &MiniFockState,
    op: &RadialHamiltonian,
) -> Result<MiniFockState, RadialError> {
    op.apply(state)
}

/// The IBC closure in isolation: the ghost's dependence on `(Ψ⁰, b₀)` and the 0-particle row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IbcStencil {
    pub layout: Layout,
    /// ghost = `ghost_psi0·Ψ⁰ + ghost_first·b₀`.
    pub ghost_psi0: Complex64,
    pub ghost_first: f64,
    /// (HΨ)⁰ = `row_psi0·Ψ⁰ + row_first·b₀`.
    pub row_psi0: f64,
    pub row_first: Complex64,
}

/// Build the boundary stencil for the coupled sector.
pub fn build_ibc_coupling(
    ibc: &IbcParams,
    metric: &MetricParams,
    kappa: i32,
    grid: &RadialGrid,
) -> Result<IbcStencil, RadialError> {
    ibc.validate()?;
    let map = TortoiseMap::new(*metric)?;
    let node = NodeTerms::at(&map, kappa, grid.half_node(0))?;
    let [a1, a2, a3, a4] = ibc.a;
    let g = ibc.g;
    Ok(if a1.abs() >= a2.abs() {
        let lambda = node.eta.exp();
        IbcStencil {
            layout: Layout::MinusOnWhole,
            ghost_psi0: g / a1,
            ghost_first: -a2 * lambda / a1,
            row_psi0: g.norm_sqr() * a3 / a1,
            row_first: g.conj() * (lambda / a1),
        }
    } else {
        let lambda = (-node.eta).exp();
        IbcStencil {
            layout: Layout::PlusOnWhole,
            ghost_psi0: g / a2,
            ghost_first: -a1 * lambda / a2,
            row_psi0: g.norm_sqr() * a4 / a2,
            row_first: -g.conj() * (lambda / a2),
        }
    })
}

/// Crank–Nicolson (Cayley) propagator `(1 + iτH/2)⁻¹(1 − iτH/2)`.
#[derive(Debug, Clone)]
pub struct CayleyStepper {
    lu: TridiagonalLu,
    diag: Vec<f64>,
    sup: Vec<Complex64>,
    half_dt: f64,
    pub dt: f64,
}

impl CayleyStepper {
    pub fn new(op: &RadialHamiltonian, dt: f64) -> Result<Self, RadialError> {
        let half_dt = 0.5 * dt;
        let i = Complex64::new(0.0, 1.0);
        let d: Vec<Complex64> = op
            .diag
            .iter()
            .map(|&h| Complex64::new(1.0, 0.0) + i * half_dt * h)
            .collect();
        let up: Vec<Complex64> = op.sup.iter().map(|&s| i * half_dt * s).collect();
        let lo: Vec<Complex64> = op.sup.iter().map(|&s| i * half_dt * s.conj()).collect();
        let lu = TridiagonalLu::new(&lo, &d, &up).ok_or(RadialError::Solve { dt })?;
        Ok(Self {
            lu,
            diag: op.diag.clone(),
            sup: op.sup.clone(),
            half_dt,
            dt,
        })
    }

    /// One step in symmetric coordinates.
    pub fn step(&self, y: &mut [Complex64]) {
        let n = y.len();
        let mi = Complex64::new(0.0, -self.half_dt);
        let mut rhs = vec![ZERO; n];
        for k in 0..n {
            let mut hy = y[k] * self.diag[k];
            if k + 1 < n {
                hy += self.sup[k] * y[k + 1];
            }
            if k > 0 {
                hy += self.sup[k - 1].conj() * y[k - 1];
            }
            rhs[k] = y[k] + mi * hy;
        }
        self.lu.solve(&mut rhs);
        y.copy_from_slice(&rhs);
    }
}

/// Evolve `steps` Cayley steps of size `dt`.
pub fn evolve(
    state: &MiniFockState,
    op: &RadialHamiltonian,
    dt: f64,
    steps: usize,
) -> Result<MiniFockState, RadialError> {
    state.check(&op.grid)?;
    let stepper = CayleyStepper::new(op, dt)?;
    let mut y = state.to_scaled(&op.grid);
    for _ in 0..steps {
        stepper.step(&mut y);
    }
    Ok(MiniFockState::from_scaled(&y, &op.grid, op.layout))
}

/// Least-squares fit of `c + b·R^{1/3}` to the first `points` samples; returns `(c, max residual)`.
fn fit_boundary(nodes: &[f64], values: &[Complex64], points: usize) -> (Complex64, f64) {
    let rows: Vec<Vec<f64>> = nodes[..points]
        .iter()
        .map(|&r| vec![1.0, r.cbrt()])
        .collect();
    let re: Vec<f64> = values[..points].iter().map(|c| c.re).collect();
    let im: Vec<f64> = values[..points].iter().map(|c| c.im).collect();
    let (Some(br), Some(bi)) = (least_squares(&rows, &re), least_squares(&rows, &im)) else {
        return (ZERO, f64::INFINITY);
    };
    let c = Complex64::new(br[0], bi[0]);
    let b = Complex64::new(br[1], bi[1]);
    let resid = rows
        .iter()
        .zip(values)
        .map(|(row, v)| (c + b * row[1] - v).norm())
        .fold(0.0, f64::max);
    (c, resid)
}

/// Fit boundary values on the three innermost nodes of each component.
pub fn extract_boundary_coeffs(
    state: &MiniFockState,
    op: &RadialHamiltonian,
) -> Result<BoundaryData, RadialError> {
    state.check(&op.grid)?;
    let (pn, pv) = state.plus(&op.grid);
    let (mn, mv) = state.minus(&op.grid);
    let (c_plus, err_plus) = fit_boundary(&pn, pv, 3);
    let (c_minus, err_minus) = fit_boundary(&mn, mv, 3);
    let (scheme_minus, scheme_plus) = op.scheme_boundary(state);
    let scale = |c: Complex64| 0.05 * c.norm() + 1e-300;
    let warning = err_plus > scale(c_plus) || err_minus > scale(c_minus);
    Ok(BoundaryData {
        c_minus,
        c_plus,
        err_minus,
        err_plus,
        scheme_minus,
        scheme_plus,
        warning,
    })
}

/// `|a₁c₋ + a₂c₊ − gΨ⁰|` with fitted boundary values; 0 for decoupled sectors' own condition
/// is replaced by `|φ₊(0) sin θ + φ₋(0) cos θ|`.
pub fn ibc_residual(state: &MiniFockState, op: &RadialHamiltonian) -> Result<f64, RadialError> {
    let b = extract_boundary_coeffs(state, op)?;
    Ok(match &op.setup.boundary {
        SectorBoundary::Ibc(p) => {
            (b.c_minus * p.a[0] + b.c_plus * p.a[1] - p.g * state.psi0).norm()
        }
        SectorBoundary::Extension { theta } => {
            (b.c_plus * theta.sin() + b.c_minus * theta.cos()).norm()
        }
    })
}

/// Dense block-diagonal assembly of several sectors sharing one Ψ⁰: the first operator
/// supplies the Ψ⁰ row; the Ψ⁰ slots of the others (decoupled extensions) are dropped.
pub fn assemble_sectors(ops: &[&RadialHamiltonian]) -> DMatrix<Complex64> {
    let dims: Vec<usize> = ops
        .iter()
        .enumerate()
        .map(|(i, o)| if i == 0 { o.dim() } else { o.dim() - 1 })
        .collect();
    let total: usize = dims.iter().sum();
    let mut m = DMatrix::from_element(total, total, ZERO);
    let mut offset = 0;
    for (i, op) in ops.iter().enumerate() {
        let d = op.dense();
        let skip = usize::from(i > 0);
        for r in skip..op.dim() {
            for c in skip..op.dim() {
                m[(offset + r - skip, offset + c - skip)] = d[(r, c)];
            }
        }
        offset += dims[i];
    }
    m
}

/// Write a snapshot: `#` header lines followed by rows
/// `R₊ Re φ₊ Im φ₊ R₋ Re φ₋ Im φ₋` (17 significant digits). The whole-node column ends
/// with the wall row `R_max 0 0`.
pub fn write_snapshot<W: Write>(
    mut w: W,
    state: &MiniFockState,
    op: &RadialHamiltonian,
    time: f64,
) -> Result<(), RadialError> {
    let s = &op.setup;
    writeln!(w, "# srn-ibc snapshot v1")?;
    writeln!(
        w,
        "# metric {:.16e} {:.16e} {:.16e} {:.16e}",
        s.metric.source_charge, s.metric.source_mass, s.metric.charge, s.metric.mass
    )?;
    writeln!(w, "# sector {} {}", s.kappa, s.twice_mj)?;
    match &s.boundary {
        SectorBoundary::Ibc(p) => writeln!(
            w,
            "# ibc {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            p.a[0], p.a[1], p.a[2], p.a[3], p.g.re, p.g.im
        )?,
        SectorBoundary::Extension { theta } => writeln!(w, "# extension {:.16e}", theta)?,
    }
    writeln!(w, "# grid {:.16e} {}", op.grid.dr, op.grid.n)?;
    writeln!(w, "# time {:.16e}", time)?;
    writeln!(w, "# psi0 {:.16e} {:.16e}", state.psi0.re, state.psi0.im)?;
    writeln!(
        w,
        "# columns R_plus re_plus im_plus R_minus re_minus im_minus"
    )?;
    let (pn, pv) = state.plus(&op.grid);
    let (mn, mv) = state.minus(&op.grid);
    let wall = op.grid.r_max();
    for k in 0..op.grid.n {
        let p = pv.get(k).copied().unwrap_or(ZERO);
        let m = mv.get(k).copied().unwrap_or(ZERO);
        let rp = pn.get(k).copied().unwrap_or(wall);
        let rm = mn.get(k).copied().unwrap_or(wall);
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            rp, p.re, p.im, rm, m.re, m.im
        )?;
    }
    Ok(())
}

/// A parsed snapshot.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub setup: SectorSetup,
    pub grid: RadialGrid,
    pub time: f64,
    pub state: MiniFockState,
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Snapshot, RadialError> {
    let perr = |line: usize, msg: &str| RadialError::Parse {
        line,
        msg: msg.to_string(),
    };
    let mut metric = None;
    let mut sector = None;
    let mut boundary = None;
    let mut grid = None;
    let mut time = 0.0;
    let mut psi0 = ZERO;
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let nums = |toks: &[&str]| -> Result<Vec<f64>, RadialError> {
            toks.iter()
                .map(|t| t.parse::<f64>().map_err(|e| perr(lineno, &e.to_string())))
                .collect()
        };
        if let Some(rest) = line.strip_prefix('#') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            match toks.first().copied() {
                Some("metric") => {
                    let v = nums(&toks[1..])?;
                    if v.len() != 4 {
                        return Err(perr(lineno, "metric needs 4 values"));
                    }
                    metric = Some(MetricParams::new(v[0], v[1], v[2], v[3])?);
                }
                Some("sector") => {
                    let v: Result<Vec<i32>, _> =
                        toks[1..].iter().map(|t| t.parse::<i32>()).collect();
                    let v = v.map_err(|e| perr(lineno, &e.to_string()))?;
                    if v.len() != 2 {
                        return Err(perr(lineno, "sector needs kappa and 2m_j"));
                    }
                    sector = Some((v[0], v[1]));
                }
                Some("ibc") => {
                    let v = nums(&toks[1..])?;
                    if v.len() != 6 {
                        return Err(perr(lineno, "ibc needs 6 values"));
                    }
                    boundary = Some(SectorBoundary::Ibc(IbcParams::new(
                        [v[0], v[1], v[2], v[3]],
                        Complex64::new(v[4], v[5]),
                    )?));
                }
                Some("extension") => {
                    let v = nums(&toks[1..])?;
                    boundary = Some(SectorBoundary::Extension {
                        theta: *v.first().ok_or_else(|| perr(lineno, "missing theta"))?,
                    });
                }
                Some("grid") => {
                    if toks.len() != 3 {
                        return Err(perr(lineno, "grid needs dR and N"));
                    }
                    let dr = toks[1]
                        .parse::<f64>()
                        .map_err(|e| perr(lineno, &e.to_string()))?;
                    let n = toks[2]
                        .parse::<usize>()
                        .map_err(|e| perr(lineno, &e.to_string()))?;
                    grid = Some(RadialGrid::new(dr, n)?);
                }
                Some("time") => {
                    time = *nums(&toks[1..])?
                        .first()
                        .ok_or_else(|| perr(lineno, "missing time"))?
                }
                Some("psi0") => {
                    let v = nums(&toks[1..])?;
                    if v.len() != 2 {
                        return Err(perr(lineno, "psi0 needs 2 values"));
                    }
                    psi0 = Complex64::new(v[0], v[1]);
                }
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = nums(&line.split_whitespace().collect::<Vec<_>>())?;
        if v.len() != 6 {
            return Err(perr(lineno, "data row needs 6 columns"));
        }
        rows.push([v[0], v[1], v[2], v[3], v[4], v[5]]);
    }
    let metric = metric.ok_or_else(|| perr(0, "missing metric header"))?;
    let (kappa, twice_mj) = sector.ok_or_else(|| perr(0, "missing sector header"))?;
    let boundary = boundary.ok_or_else(|| perr(0, "missing boundary header"))?;
    let grid = grid.ok_or_else(|| perr(0, "missing grid header"))?;
    if rows.len() != grid.n {
        return Err(RadialError::Shape {
            expected: grid.n,
            got: rows.len(),
        });
    }
    let setup = SectorSetup {
        metric,
        kappa,
        twice_mj,
        boundary,
    };
    let layout = boundary.layout();
    let plus: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
    let minus: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r[4], r[5])).collect();
    let (half, mut whole) = match layout {
        Layout::MinusOnWhole => (plus, minus),
        Layout::PlusOnWhole => (minus, plus),
    };
    whole.truncate(grid.n - 1);
    Ok(Snapshot {
        setup,
        grid,
        time,
        state: MiniFockState {
            psi0,
            half,
            whole,
            layout,
        },
    })
}
