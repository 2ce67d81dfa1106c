//! Perturbative non-Markovian master equation on a toy radial grid.
//!
//! The Hilbert space is the interior of a small `RadialGrid`, with
//! amplitudes c_i = u_i·sqrt(4πh) so that Σ|c_i|² is the norm. The noise
//! enters through diagonal couplings Â(k_n) = (m/k_n) j0(k_n r̂) on a radial
//! k-grid and a spatial kernel D(k_n, k_n') fixed so that the couplings
//! reproduce the stochastic potential covariance exactly on the grid:
//! ħ²γ Σ (w_n A_n)(w_n' A_n') D_nn' = C, w_n = 4πk_n²Δk_n.
//!
//! Integration runs in the interaction picture of H₀ using its eigenbasis,
//! with RK4 for the √γ and γ terms.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianPacket;
use crate::grid::RadialGrid;
use crate::noise::TemporalMode;
use crate::params::SimParams;
use crate::potential::{KernelGeometry, KernelMatrix};
use crate::special::sinc;

pub const MAX_TOY_POINTS: usize = 64;
pub const MIN_K_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KSpacing {
    /// k_n = nπ/R_box, n = 1..N: the sine transform of the grid itself.
    Sine,
    /// M log-spaced points on [π/R_box, π/h].
    Log(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KGrid {
    pub k: Vec<f64>,
    pub dk: Vec<f64>,
}

impl KGrid {
    pub fn new(grid: &RadialGrid, spacing: KSpacing) -> Result<Self> {
        let r_box = grid.r_max();
        let (k, dk) = match spacing {
            KSpacing::Sine => {
                let d = PI / r_box;
                let k: Vec<f64> = (1..grid.n - 1).map(|n| n as f64 * d).collect();
                let dk = vec![d; k.len()];
                (k, dk)
            }
            KSpacing::Log(m) => {
                if m < MIN_K_POINTS {
                    return Err(invalid("k_points", "need at least 4"));
                }
                let (lo, hi) = ((PI / r_box).ln(), (PI / grid.h).ln());
                let k: Vec<f64> = (0..m).map(|i| (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp()).collect();
                let dk = (0..m)
                    .map(|i| {
                        let a = if i == 0 { k[0] } else { 0.5 * (k[i - 1] + k[i]) };
                        let b = if i + 1 == m { k[m - 1] } else { 0.5 * (k[i] + k[i + 1]) };
                        b - a
                    })
                    .collect();
                (k, dk)
            }
        };
        if k.len() < MIN_K_POINTS {
            return Err(invalid("k_points", "need at least 4"));
        }
        Ok(KGrid { k, dk })
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// 4πk_n²Δk_n, the measure of ∫d³k for an isotropic integrand.
    pub fn weight(&self, n: usize) -> f64 {
        4.0 * PI * self.k[n] * self.k[n] * self.dk[n]
    }

    /// Diagonal of A(k_n) = (m/k_n) j0(k_n r_i) on the grid interior.
    pub fn coupling(&self, mass: f64, grid: &RadialGrid, n: usize) -> DVector<f64> {
        let k = self.k[n];
        DVector::from_iterator(grid.n - 2, (1..grid.n - 1).map(|i| mass / k * sinc(k * grid.r(i))))
    }
}

/// (G/(2π²ħ))²
pub fn gamma_of(p: &SimParams) -> f64 {
    let s = p.g / (2.0 * PI * PI * p.hbar);
    s * s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DKernel {
    pub kgrid: KGrid,
    /// Spatial part D(k_n, k_n') on the grid, symmetric.
    pub spatial: DMatrix<f64>,
    pub temporal: TemporalMode,
    /// Packet time at which the spatial part was evaluated.
    pub kernel_time: f64,
}

impl DKernel {
    /// D(k_n, k_n', t, t') = D_s(k_n, k_n')·f(t − t').
    pub fn value(&self, n: usize, n2: usize, t: f64, t2: f64) -> f64 {
        let f = match self.temporal {
            TemporalMode::White => {
                if t == t2 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            TemporalMode::ExponentialMemory { tau_c } => (-(t - t2).abs() / tau_c).exp(),
        };
        self.spatial[(n, n2)] * f
    }

    /// D̃ = 16π²k²k'²D, spatial part.
    pub fn tilde(&self, n: usize, n2: usize) -> f64 {
        let (k, k2) = (self.kgrid.k[n], self.kgrid.k[n2]);
        16.0 * PI * PI * k * k * k2 * k2 * self.spatial[(n, n2)]
    }
}

/// Rows i, columns n: w_n A_n(r_i).
fn coupling_matrix(p: &SimParams, grid: &RadialGrid, kgrid: &KGrid) -> DMatrix<f64> {
    let n = grid.n - 2;
    let mut m = DMatrix::zeros(n, kgrid.len());
    for j in 0..kgrid.len() {
        let col = kgrid.coupling(p.mass, grid, j) * kgrid.weight(j);
        m.set_column(j, &col);
    }
    m
}

fn check_toy(grid: &RadialGrid) -> Result<()> {
    if grid.n - 2 > MAX_TOY_POINTS {
        return Err(invalid("grid", "the master equation is a toy-scale check: at most 64 interior points"));
    }
    Ok(())
}

/// Spatial kernel from the energy covariance of `packet` on the grid
/// interior, pulled back through the couplings with a pseudo-inverse.
pub fn build_dkernel(
    p: &SimParams,
    packet: &GaussianPacket,
    grid: &RadialGrid,
    kgrid: KGrid,
    geometry: KernelGeometry,
    temporal: TemporalMode,
) -> Result<DKernel> {
    p.validate()?;
    check_toy(grid)?;
    let radii: Vec<f64> = (1..grid.n - 1).map(|i| grid.r(i)).collect();
    let c = KernelMatrix::energy(p, packet, radii, geometry)?.to_matrix();
    let m = coupling_matrix(p, grid, &kgrid);
    let pinv = m.clone().pseudo_inverse(1e-12).map_err(|e| Error::Shape(e.into()))?;
    let scale = 1.0 / (p.hbar * p.hbar * gamma_of(p));
    let mut d = &pinv * c * pinv.transpose() * scale;
    let d2 = d.transpose();
    d = (d + d2) * 0.5;
    Ok(DKernel { kgrid, spatial: d, temporal, kernel_time: packet.time })
}

/// The same kernel in the continuum for a free Gaussian packet:
/// (4π²m²/(kk'))·e^{−(k²+k'²)b²/4}(sinh s / s − 1), s = kk'b²/2, with b the
/// density width. The bracket is Cov(j0(k|x|), j0(k'|x|)) over |ψ(x)|².
pub fn continuum_spatial(p: &SimParams, packet: &GaussianPacket, k: f64, k2: f64) -> f64 {
    let b = packet.density_width();
    let s = 0.5 * k * k2 * b * b;
    let shinc = if s < 1e-4 { 1.0 + s * s / 6.0 } else { s.sinh() / s };
    let cov = (-(k * k + k2 * k2) * b * b / 4.0).exp() * (shinc - 1.0);
    4.0 * PI * PI * p.mass * p.mass / (k * k2) * cov
}

/// −(ħ²/2m)B⁻¹δ² on the grid interior, with B = tridiag(1,10,1)/12.
pub fn free_hamiltonian(p: &SimParams, grid: &RadialGrid) -> DMatrix<f64> {
    let n = grid.n - 2;
    let h2 = grid.h * grid.h;
    let lap = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => -2.0 / h2,
        1 => 1.0 / h2,
        _ => 0.0,
    });
    let b = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 10.0 / 12.0,
        1 => 1.0 / 12.0,
        _ => 0.0,
    });
    let binv = b.try_inverse().expect("B is diagonally dominant");
    let h = binv * lap * (-p.hbar * p.hbar / (2.0 * p.mass));
    (&h + h.transpose()) * 0.5
}

/// Pure ρ₀ = cc† from the free Gaussian sampled on the grid, normalized.
pub fn initial_gaussian(p: &SimParams, grid: &RadialGrid) -> DMatrix<Complex64> {
    let pk = p.packet(0.0);
    let c = DVector::from_iterator(grid.n - 2, (1..grid.n - 1).map(|i| pk.psi(grid.r(i)) * grid.r(i)));
    let c = &c / Complex64::new(c.norm(), 0.0);
    &c * c.adjoint()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// −γΣ(A Q ρ + ρ Q A): the memory term as written, not trace preserving
    /// at order γ.
    AsPrinted,
    /// −γΣ[A, [Q, ρ]]: adds the cross terms so the trace is conserved.
    Completed,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::AsPrinted => "as_printed",
            Structure::Completed => "completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterConfig {
    pub gamma: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub record_every: usize,
    pub structure: Structure,
    /// Include the i√γ⟨Â⟩ mean-field term.
    pub mean_field: bool,
    /// Abort once |tr ρ − 1| exceeds this.
    pub trace_tol: f64,
}

impl MasterConfig {
    pub fn new(p: &SimParams, dt: f64, n_steps: usize) -> Self {
        MasterConfig {
            gamma: gamma_of(p),
            dt,
            n_steps,
            record_every: 1,
            structure: Structure::AsPrinted,
            mean_field: true,
            trace_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterResult {
    pub times: Vec<f64>,
    /// Position-basis ρ at each recorded time.
    pub rho: Vec<DMatrix<Complex64>>,
    pub trace: Vec<f64>,
    pub min_eig: Vec<f64>,
    /// Largest |ρ − ρ†| entry produced by a raw step, before symmetrizing.
    pub max_raw_asymmetry: f64,
    pub max_trace_drift: f64,
}

impl MasterResult {
    /// |ρ_ij| / sqrt(ρ_ii ρ_jj) at every recorded time.
    pub fn coherence(&self, i: usize, j: usize) -> Vec<f64> {
        self.rho.iter().map(|r| r[(i, j)].norm() / (r[(i, i)].re * r[(j, j)].re).sqrt()).collect()
    }
}

fn max_asymmetry(m: &DMatrix<Complex64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn trace(m: &DMatrix<Complex64>) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Time-dependent pieces of the right-hand side, in the H₀ eigenbasis.
struct Terms {
    /// Couplings w_n A_n in the eigenbasis (real symmetric).
    a: Vec<DMatrix<f64>>,
    /// Σ_n' D_nn' w_n' A_n' in the eigenbasis.
    x: Vec<DMatrix<f64>>,
    w: Vec<f64>,
    omega: DMatrix<f64>,
    rho0: DMatrix<Complex64>,
}

impl Terms {
    fn rotate(&self, m: &DMatrix<f64>, t: f64) -> DMatrix<Complex64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |a, b| m[(a, b)] * Complex64::from_polar(1.0, self.omega[(a, b)] * t))
    }
}

/// Memory weights q_ab(t) ≈ ∫₀ᵗ f(t − t') e^{iω_ab t'} dt' by the trapezoid
/// rule on a uniform history at spacing `eta`. For an exponential kernel
/// the rule is evaluated recursively: with R_K = Σ_j c_j f(t_K − t_j)e^{iωt_j}
/// (c₀ = ½, else 1), R_{K+1} = e^{−η/τ}R_K + e^{iωt_{K+1}} and
/// q(t_K) = η(R_K − ½e^{iωt_K}). White noise takes half the delta at s = 0.
struct Memory {
    temporal: TemporalMode,
    eta: f64,
    r: DMatrix<Complex64>,
    k: usize,
}

impl Memory {
    fn new(temporal: TemporalMode, eta: f64, n: usize) -> Self {
        Memory { temporal, eta, r: DMatrix::from_element(n, n, Complex64::new(0.5, 0.0)), k: 0 }
    }

    fn weights(&self, omega: &DMatrix<f64>) -> DMatrix<Complex64> {
        let t = self.k as f64 * self.eta;
        let phase = |a: usize, b: usize| Complex64::from_polar(1.0, omega[(a, b)] * t);
        let n = omega.nrows();
        match self.temporal {
            TemporalMode::White => DMatrix::from_fn(n, n, |a, b| phase(a, b) * 0.5),
            TemporalMode::ExponentialMemory { .. } => {
                DMatrix::from_fn(n, n, |a, b| (self.r[(a, b)] - phase(a, b) * 0.5) * self.eta)
            }
        }
    }

    fn advance(&mut self, omega: &DMatrix<f64>) {
        self.k += 1;
        if let TemporalMode::ExponentialMemory { tau_c } = self.temporal {
            let decay = (-self.eta / tau_c).exp();
            let t = self.k as f64 * self.eta;
            for a in 0..omega.nrows() {
                for b in 0..omega.ncols() {
                    self.r[(a, b)] = self.r[(a, b)] * decay + Complex64::from_polar(1.0, omega[(a, b)] * t);
                }
            }
        }
    }
}

/// Coefficient operators at one time: Ã_I,n, Q_I,n and the mean field.
struct Stage {
    a: Vec<DMatrix<Complex64>>,
    q: Vec<DMatrix<Complex64>>,
    mean: DMatrix<Complex64>,
}

fn stage(terms: &Terms, q: &DMatrix<Complex64>, t: f64, sqrt_gamma: f64, mean_field: bool) -> Stage {
    let n = terms.omega.nrows();
    let a: Vec<DMatrix<Complex64>> = terms.a.iter().map(|m| terms.rotate(m, t)).collect();
    let qs = terms.x.iter().map(|x| x.map(|v| Complex64::new(v, 0.0)).component_mul(q)).collect();
    let mut mean = DMatrix::zeros(n, n);
    if mean_field {
        for (an, &w) in a.iter().zip(&terms.w) {
            // ⟨Ã_n⟩ against the zeroth-order state, constant in this picture.
            let expect = (&terms.rho0 * an).trace().re;
            mean += an * Complex64::new(sqrt_gamma * expect / w, 0.0);
        }
    }
    Stage { a, q: qs, mean }
}

fn rhs(s: &Stage, rho: &DMatrix<Complex64>, gamma: f64, structure: Structure) -> DMatrix<Complex64> {
    let i = Complex64::new(0.0, 1.0);
    let mut out = (&s.mean * rho - rho * &s.mean) * i;
    let g = Complex64::new(gamma, 0.0);
    for (a, q) in s.a.iter().zip(&s.q) {
        let aq = a * q;
        let qa = q * a;
        match structure {
            Structure::AsPrinted => out -= (&aq * rho + rho * &qa) * g,
            Structure::Completed => {
                out -= (&aq * rho - a * rho * q - q * rho * a + rho * &qa) * g;
            }
        }
    }
    out
}

pub fn evolve_master(
    p: &SimParams,
    grid: &RadialGrid,
    rho0: &DMatrix<Complex64>,
    kernel: &DKernel,
    cfg: &MasterConfig,
) -> Result<MasterResult> {
    p.validate()?;
    check_toy(grid)?;
    let n = grid.n - 2;
    if rho0.nrows() != n || rho0.ncols() != n {
        return Err(Error::Shape("ρ₀ must match the grid interior".into()));
    }
    if !(cfg.dt > 0.0) || cfg.record_every == 0 || !(cfg.gamma >= 0.0) || !(cfg.trace_tol > 0.0) {
        return Err(invalid("master", "need dt > 0, record_every > 0, γ ≥ 0, trace_tol > 0"));
    }
    let asym = max_asymmetry(rho0);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if (trace(rho0) - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm: trace(rho0) });
    }
    let lam0 = min_eigenvalue(rho0);
    if lam0 < -1e-12 {
        return Err(Error::NotPsd { min_eig: lam0, max_eig: f64::NAN });
    }
    let eig = SymmetricEigen::new(free_hamiltonian(p, grid));
    let v = eig.eigenvectors.clone();
    let vc = complexify(&v);
    let e = eig.eigenvalues.clone();
    let omega = DMatrix::from_fn(n, n, |a, b| (e[a] - e[b]) / p.hbar);
    let kg = &kernel.kgrid;
    let a: Vec<DMatrix<f64>> = (0..kg.len())
        .map(|j| {
            let d = kg.coupling(p.mass, grid, j) * kg.weight(j);
            v.transpose() * DMatrix::from_diagonal(&d) * &v
        })
        .collect();
    let x: Vec<DMatrix<f64>> = (0..kg.len())
        .map(|j| {
            let mut s = DMatrix::zeros(n, n);
            for (jj, aj) in a.iter().enumerate() {
                s += aj * kernel.spatial[(j, jj)];
            }
            s
        })
        .collect();
    let rho_eig = vc.adjoint() * rho0 * &vc;
    let terms = Terms { a, x, w: (0..kg.len()).map(|j| kg.weight(j)).collect(), omega, rho0: rho_eig.clone() };
    let to_position = |rho_i: &DMatrix<Complex64>, t: f64| {
        let u = DMatrix::from_fn(n, n, |a, b| rho_i[(a, b)] * Complex64::from_polar(1.0, -(e[a] - e[b]) * t / p.hbar));
        &vc * u * vc.adjoint()
    };

    let sg = cfg.gamma.sqrt();
    let dt = cfg.dt;
    let mut memory = Memory::new(kernel.temporal, 0.5 * dt, n);
    let mut rho = rho_eig;
    let mut out = MasterResult {
        times: Vec::new(),
        rho: Vec::new(),
        trace: Vec::new(),
        min_eig: Vec::new(),
        max_raw_asymmetry: 0.0,
        max_trace_drift: 0.0,
    };
    let record = |out: &mut MasterResult, rho_i: &DMatrix<Complex64>, t: f64| {
        let r = to_position(rho_i, t);
        out.times.push(t);
        out.trace.push(trace(&r));
        out.min_eig.push(min_eigenvalue(&r));
        out.rho.push(r);
    };
    record(&mut out, &rho, 0.0);
    let half = Complex64::new(0.5 * dt, 0.0);
    let full = Complex64::new(dt, 0.0);
    let mut s0 = stage(&terms, &memory.weights(&terms.omega), 0.0, sg, cfg.mean_field);
    for step in 0..cfg.n_steps {
        let t = step as f64 * dt;
        memory.advance(&terms.omega);
        let s_half = stage(&terms, &memory.weights(&terms.omega), t + 0.5 * dt, sg, cfg.mean_field);
        memory.advance(&terms.omega);
        let s1 = stage(&terms, &memory.weights(&terms.omega), t + dt, sg, cfg.mean_field);
        let k1 = rhs(&s0, &rho, cfg.gamma, cfg.structure);
        let k2 = rhs(&s_half, &(&rho + &k1 * half), cfg.gamma, cfg.structure);
        let k3 = rhs(&s_half, &(&rho + &k2 * half), cfg.gamma, cfg.structure);
        let k4 = rhs(&s1, &(&rho + &k3 * full), cfg.gamma, cfg.structure);
        rho += (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * Complex64::new(dt / 6.0, 0.0);
        out.max_raw_asymmetry = out.max_raw_asymmetry.max(max_asymmetry(&rho));
        rho = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
        let tnow = t + dt;
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { t: tnow });
        }
        // The trace is basis independent, so check it in the eigenbasis.
        let drift = (trace(&rho) - 1.0).abs();
        out.max_trace_drift = out.max_trace_drift.max(drift);
        if drift > cfg.trace_tol {
            return Err(Error::TraceDrift { drift, t: tnow });
        }
        if (step + 1) % cfg.record_every == 0 || step + 1 == cfg.n_steps {
            record(&mut out, &rho, tnow);
        }
        s0 = s1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Scaling and squaring with a Taylor core; independent of the
    /// eigendecomposition the integrator uses.
    fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut s = 0;
        while a.norm() / 2f64.powi(s) > 0.25 {
            s += 1;
        }
        let x = a / Complex64::new(2f64.powi(s), 0.0);
        let n = a.nrows();
        let mut sum = DMatrix::<Complex64>::identity(n, n);
        let mut term = sum.clone();
        for j in 1..30 {
            term = &term * &x / Complex64::new(j as f64, 0.0);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn toy() -> (SimParams, RadialGrid) {
        (SimParams::default(), RadialGrid::new(10, 4.5).unwrap())
    }

    fn kernel(p: &SimParams, grid: &RadialGrid, temporal: TemporalMode) -> DKernel {
        let kg = KGrid::new(grid, KSpacing::Sine).unwrap();
        build_dkernel(p, &p.packet(0.0), grid, kg, KernelGeometry::Shell, temporal).unwrap()
    }

    #[test]
    fn kernel_reproduces_grid_covariance() {
        let (p, grid) = toy();
        for spacing in [KSpacing::Sine, KSpacing::Log(16)] {
            let kg = KGrid::new(&grid, spacing).unwrap();
            let dk = build_dkernel(&p, &p.packet(0.0), &grid, kg.clone(), KernelGeometry::Shell, TemporalMode::White)
                .unwrap();
            let m = coupling_matrix(&p, &grid, &kg);
            let back = &m * &dk.spatial * m.transpose() * (p.hbar * p.hbar * gamma_of(&p));
            let radii: Vec<f64> = (1..grid.n - 1).map(|i| grid.r(i)).collect();
            let c = KernelMatrix::energy(&p, &p.packet(0.0), radii, KernelGeometry::Shell).unwrap().to_matrix();
            assert!((back - &c).norm() < 1e-8 * c.norm(), "{spacing:?}");
            assert_eq!(dk.spatial, dk.spatial.transpose());
            assert_eq!(dk.value(1, 3, 0.4, 0.1), dk.value(3, 1, 0.1, 0.4));
        }
        let mut small = grid;
        small.n = 5;
        assert!(KGrid::new(&small, KSpacing::Sine).is_err());
        assert!(KGrid::new(&grid, KSpacing::Log(3)).is_err());
    }

    #[test]
    fn continuum_spot_value_matches_monte_carlo() {
        let p = SimParams::default();
        let pk = p.packet(0.0);
        let b = pk.density_width();
        let (k, k2) = (1.0, 1.0);
        let want = continuum_spatial(&p, &pk, k, k2);
        // Independent x, x' from |ψ|²: j0(k|x|)j0(k'|x|) − j0(k|x|)j0(k'|x'|)
        // has mean Cov(j0, j0').
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = b / 2f64.sqrt();
        let n = 2_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let mut r = [0.0f64; 2];
            for ri in r.iter_mut() {
                let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                *ri = s * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            }
            let x = sinc(k * r[0]) * sinc(k2 * r[0]) - sinc(k * r[0]) * sinc(k2 * r[1]);
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let pref = 4.0 * PI * PI * p.mass * p.mass / (k * k2);
        assert!((pref * mean - want).abs() < 3.0 * pref * se, "{} vs {want} ± {}", pref * mean, pref * se);
        assert_eq!(continuum_spatial(&p, &pk, 0.7, 1.3), continuum_spatial(&p, &pk, 1.3, 0.7));
    }

    #[test]
    fn unitary_limit_matches_matrix_exponential() {
        let (p, grid) = toy();
        let rho0 = initial_gaussian(&p, &grid);
        let mut cfg = MasterConfig::new(&p, 0.01, 150);
        cfg.gamma = 0.0;
        cfg.record_every = 50;
        let res = evolve_master(&p, &grid, &rho0, &kernel(&p, &grid, TemporalMode::White), &cfg).unwrap();
        let h = complexify(&free_hamiltonian(&p, &grid));
        for (t, rho) in res.times.iter().zip(&res.rho) {
            let u = expm(&(&h * Complex64::new(0.0, -t / p.hbar)));
            let want = &u * &rho0 * u.adjoint();
            assert!((rho - want).norm() < 1e-8, "t={t}");
        }
        assert!(res.max_trace_drift < 1e-13);
    }

    #[test]
    fn completed_form_conserves_trace_and_decoheres() {
        let (p, grid) = toy();
        let rho0 = initial_gaussian(&p, &grid);
        for temporal in [TemporalMode::White, TemporalMode::ExponentialMemory { tau_c: 0.5 }] {
            let mut cfg = MasterConfig::new(&p, 0.01, 300);
            cfg.structure = Structure::Completed;
            cfg.record_every = 100;
            let res = evolve_master(&p, &grid, &rho0, &kernel(&p, &grid, temporal), &cfg).unwrap();
            assert!(res.max_trace_drift < 1e-8, "{temporal:?}: {}", res.max_trace_drift);
            assert!(res.max_raw_asymmetry < 1e-12, "{}", res.max_raw_asymmetry);
            let d = res.coherence(0, 5);
            assert!(d.last().unwrap() < &0.999, "{d:?}");
            for w in d.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    #[test]
    fn as_printed_trace_defect_is_order_gamma() {
        let (p, grid) = toy();
        let rho0 = initial_gaussian(&p, &grid);
        let dk = kernel(&p, &grid, TemporalMode::White);
        let mut defects = Vec::new();
        for scale in [1e-2, 1e-3] {
            let mut cfg = MasterConfig::new(&p, 0.01, 100);
            cfg.gamma *= scale;
            cfg.trace_tol = 1.0;
            let res = evolve_master(&p, &grid, &rho0, &dk, &cfg).unwrap();
            defects.push(res.max_trace_drift);
        }
        assert!(defects[0] > 1e-8);
        let ratio = defects[0] / defects[1];
        assert!((ratio - 10.0).abs() < 0.5, "{defects:?}");
    }

    #[test]
    fn deviation_scales_as_root_gamma() {
        let (p, grid) = toy();
        let rho0 = initial_gaussian(&p, &grid);
        let dk = kernel(&p, &grid, TemporalMode::White);
        let mut base = MasterConfig::new(&p, 0.01, 100);
        base.structure = Structure::Completed;
        let g0 = base.gamma;
        base.gamma = 0.0;
        let free = evolve_master(&p, &grid, &rho0, &dk, &base).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in [1e-2, 1e-4, 1e-6] {
            let mut cfg = base.clone();
            cfg.gamma = g0 * s;
            let res = evolve_master(&p, &grid, &rho0, &dk, &cfg).unwrap();
            xs.push(cfg.gamma.ln());
            ys.push((res.rho.last().unwrap() - free.rho.last().unwrap()).norm().ln());
        }
        let (slope, _) = crate::stats::linear_fit(&xs, &ys);
        assert!((slope - 0.5).abs() < 0.05, "{slope}");
    }

    #[test]
    fn mean_field_converges_to_newtonian_potential() {
        // The √γ term is −(i/ħ)[V̄, ρ] with V̄ = −ħ√γ Σ w_n⟨A_n⟩A_n; the
        // k-sum solves Poisson with V(R_box) = 0, so it approaches the
        // Newtonian potential shifted by the constant Gm²/R_box (a gauge).
        let p = SimParams::default();
        let pk = p.packet(0.0);
        let mut errs = Vec::new();
        for n in [10usize, 34, 66] {
            let grid = RadialGrid::new(n, 8.0).unwrap();
            let rho0 = initial_gaussian(&p, &grid);
            let kg = KGrid::new(&grid, KSpacing::Sine).unwrap();
            let m = grid.n - 2;
            let mut v = DVector::<f64>::zeros(m);
            for j in 0..kg.len() {
                let a = kg.coupling(p.mass, &grid, j);
                let expect: f64 = (0..m).map(|i| rho0[(i, i)].re * a[i]).sum();
                v -= &a * (p.hbar * gamma_of(&p).sqrt() * kg.weight(j) * expect);
            }
            let i = grid.nearest(1.0) - 1;
            let want = crate::potential::mean_potential_gaussian(&p, &pk, grid.r(i + 1));
            let gauge = p.g * p.mass * p.mass / grid.r_max();
            errs.push(((v[i] - want - gauge) / want).abs());
        }
        assert!(errs[2] < errs[0] && errs[2] < 2e-3, "{errs:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, grid) = toy();
        let dk = kernel(&p, &grid, TemporalMode::White);
        let cfg = MasterConfig::new(&p, 0.01, 2);
        let mut rho = initial_gaussian(&p, &grid);
        rho[(0, 1)] += Complex64::new(0.1, 0.0);
        assert!(matches!(evolve_master(&p, &grid, &rho, &dk, &cfg), Err(Error::NotSymmetric { .. })));
        let rho = initial_gaussian(&p, &grid) * Complex64::new(2.0, 0.0);
        assert!(evolve_master(&p, &grid, &rho, &dk, &cfg).is_err());
        let big = RadialGrid::new(80, 10.0).unwrap();
        assert!(evolve_master(&p, &big, &DMatrix::identity(78, 78), &dk, &cfg).is_err());
    }
}
