//! Mean Newtonian self-potential and the equal-time covariance of the
//! stochastic potential for a Gaussian density.
//!
//! For ρ = |ψ|² ∝ e^{-x²/b²} the single-centre integral is
//! P(r) = ∫ρ/|x−r| = erf(r/b)/r and the coincident two-centre integral is
//! J(r,r) = ∫ρ/|x−r|² = 2F(r/b)/(b r) with F Dawson's function. The
//! two-centre integral for distinct points is reduced in prolate spheroidal
//! coordinates: both Coulomb factors cancel against the volume element, the
//! η-integral is a difference of scaled complementary error functions, and
//! one smooth ξ-integral is left for adaptive quadrature.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::gaussian::GaussianPacket;
use crate::grid::RadialState;
use crate::params::SimParams;
use crate::quad::{gauss10, integrate_breaks, integrate_to_inf, QuadResult, Tolerance};
use crate::special::{dawson, erf, erf_over_x, erfc, erfcx, PI_POW_M32, SQRT_PI};

/// −Gm² erf(r/b)/r for the free packet, b = a/√α.
pub fn mean_potential_gaussian(p: &SimParams, packet: &GaussianPacket, r: f64) -> f64 {
    -p.g * p.mass * p.mass * single_center(packet.density_width(), r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialSource {
    AnalyticGaussian,
    GridConvolution,
}

/// V̄ on the state's grid, as a potential energy (the mV term).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPotential {
    pub values: Vec<f64>,
    pub source: PotentialSource,
}

pub const MIN_GRID_POINTS: usize = 16;

/// V̄(r) = −4πGm²[(1/r)∫₀^r |u|² + ∫_r^∞ |u|²/r'] by cumulative trapezoid
/// sums. Exact shell-theorem structure, second order in h.
pub fn mean_potential_grid(p: &SimParams, state: &RadialState) -> Result<MeanPotential> {
    if state.grid.n < MIN_GRID_POINTS {
        return Err(Error::GridTooCoarse { points: state.grid.n, min: MIN_GRID_POINTS });
    }
    state.check_normalized(1e-6)?;
    let mut values = vec![0.0; state.grid.n];
    mean_potential_into(p.g * p.mass * p.mass, state, &mut values);
    Ok(MeanPotential { values, source: PotentialSource::GridConvolution })
}

/// Unchecked kernel of [`mean_potential_grid`], reused by the stepper.
pub(crate) fn mean_potential_into(gm2: f64, state: &RadialState, out: &mut [f64]) {
    let n = state.grid.n;
    let h = state.grid.h;
    let d: Vec<f64> = state.u.iter().map(|z| z.norm_sqr()).collect();
    // inner[i] = ∫₀^{r_i} |u|²
    let mut inner = 0.0;
    out[0] = 0.0;
    for i in 1..n {
        inner += 0.5 * h * (d[i - 1] + d[i]);
        out[i] = inner / (i as f64 * h);
    }
    // outer integrand |u|²/r vanishes at r = 0 since u ~ r.
    let q = |i: usize| if i == 0 { 0.0 } else { d[i] / (i as f64 * h) };
    let mut outer = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            outer += 0.5 * h * (q(i) + q(i + 1));
        }
        out[i] = -4.0 * PI * gm2 * (out[i] + outer);
    }
}

/// P(r) = ∫ρ/|x−r| d³x for ρ ∝ e^{-x²/b²}.
pub fn single_center(b: f64, r: f64) -> f64 {
    erf_over_x(r / b) / b
}

/// J(r,r) = ∫ρ/|x−r|² d³x = 2F(r/b)/(b r), with limit 2/b² at r = 0.
pub fn self_pair(b: f64, r: f64) -> f64 {
    let x = r / b;
    let f_over_x = if x < 1e-4 { 1.0 - 2.0 * x * x / 3.0 } else { dawson(x) / x };
    2.0 * f_over_x / (b * b)
}

/// J(r₁,r₂) = ∫ρ/(|x−r₁||x−r₂|) d³x for two points on a common ray from
/// the centre of ρ ∝ e^{-x²/b²}.
pub fn two_center(b: f64, r1: f64, r2: f64, tol: Tolerance) -> Result<QuadResult> {
    let (z1, z2) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if z1 == z2 {
        return Ok(QuadResult { value: self_pair(b, z1), abs_err: 0.0, evals: 0 });
    }
    let c = 0.5 * (z1 + z2);
    let d = z2 - z1;
    let s = 0.5 * d / b; // √A
    let pref = 0.5 * SQRT_PI / s;
    let g = |xi: f64| {
        let bb = 2.0 * c * xi / d;
        let em = (c - 0.5 * d * xi) / b;
        let ep = (c + 0.5 * d * xi) / b;
        let lo = (-em * em).exp() * erfcx(s * (bb - 1.0));
        let hi = (-ep * ep).exp() * erfcx(s * (bb + 1.0));
        if hi < 0.5 * lo {
            return pref * (lo - hi);
        }
        // The two terms nearly cancel only when the exponent barely varies
        // over η ∈ [-1, 1]; then a 10-point rule is exact to round-off.
        let rho2 = 0.25 * d * d * (xi * xi - 1.0);
        gauss10(
            |eta| {
                let z = c + 0.5 * d * xi * eta;
                (-(z * z + rho2 * (1.0 - eta * eta)) / (b * b)).exp()
            },
            -1.0,
            1.0,
        )
    };
    let xi_star = (2.0 * c / d).max(1.0);
    let scale = 2.0 * b / d;
    let mut breaks = vec![1.0];
    let left = xi_star - 8.0 * scale;
    if left > 1.0 {
        breaks.push(left);
    }
    if xi_star > 1.0 {
        breaks.push(xi_star);
    }
    let head = integrate_breaks(g, &breaks, tol)?;
    let tail = integrate_to_inf(g, xi_star, scale, tol)?;
    let norm = PI * d * PI_POW_M32 / (b * b * b);
    Ok(QuadResult {
        value: norm * (head.value + tail.value),
        abs_err: norm * (head.abs_err + tail.abs_err),
        evals: head.evals + tail.evals,
    })
}

/// Probability mass inside radius r for ρ ∝ e^{-x²/b²}, divided by r.
fn enclosed_over_r(b: f64, r: f64) -> f64 {
    let x = r / b;
    if x < 0.5 {
        // (2/√π) Σ (−1)^n x^{2n+3}/(n!(n+3/2)), divided by r
        let x2 = x * x;
        let mut term = 1.0;
        let mut sum = 0.0;
        let mut n = 0;
        while n < 30 {
            let t = term / (n as f64 + 1.5);
            sum += t;
            if t.abs() < 1e-17 * sum.abs() {
                break;
            }
            n += 1;
            term *= -x2 / n as f64;
        }
        2.0 / SQRT_PI * x * x2 * sum / r
    } else {
        (erf(x) - 2.0 / SQRT_PI * x * (-x * x).exp()) / r
    }
}

/// Shell-averaged J: ⟨1/(max(|x|,r) max(|x|,r'))⟩ over ρ. This is the
/// two-point function the s-wave projection of the field sees.
pub fn shell_pair(b: f64, r1: f64, r2: f64) -> f64 {
    let (r, rp) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    let (x, xp) = (r / b, rp / b);
    let inner = if rp == 0.0 { 0.0 } else { enclosed_over_r(b, r) / rp };
    let middle = if rp == 0.0 { 0.0 } else { 2.0 / (SQRT_PI * b * rp) * ((-x * x).exp() - (-xp * xp).exp()) };
    let outer = 2.0 / (b * b) * erfc(xp);
    inner + middle + outer
}

/// How the two field points are placed relative to the packet centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelGeometry {
    /// Both points on one ray through the centre: the literal two-point
    /// correlator at r ẑ and r′ ẑ.
    #[default]
    Ray,
    /// Average over the spheres of radius r and r′: the covariance of the
    /// s-wave part of the field, the only part a radial state couples to.
    Shell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelatorValue {
    pub value: f64,
    pub abs_err: f64,
}

/// ⟨V_st(r)V_st(r′)⟩ = (G²m²/4)[J(r,r′) − P(r)P(r′)] for the free packet.
pub fn stochastic_correlator(
    p: &SimParams,
    packet: &GaussianPacket,
    r1: f64,
    r2: f64,
    geometry: KernelGeometry,
) -> Result<CorrelatorValue> {
    let b = packet.density_width();
    let (j, err) = match geometry {
        KernelGeometry::Ray => {
            let q = two_center(b, r1, r2, Tolerance::rel(1e-13))?;
            (q.value, q.abs_err)
        }
        KernelGeometry::Shell => (shell_pair(b, r1, r2), 0.0),
    };
    let pref = 0.25 * p.g * p.g * p.mass * p.mass;
    let pp = single_center(b, r1) * single_center(b, r2);
    Ok(CorrelatorValue { value: pref * (j - pp), abs_err: pref * err })
}

/// A symmetric covariance tabulated on a set of radii, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub abs_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub min_eig: f64,
    pub max_eig: f64,
}

impl KernelMatrix {
    pub fn from_values(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != radii.len() * radii.len() {
            return Err(Error::Shape(alloc::format!("{} values for {} radii", values.len(), radii.len())));
        }
        Ok(KernelMatrix { radii, values, abs_err: 0.0 })
    }

    /// Tabulate f on the upper triangle and mirror it.
    pub fn from_fn<F>(radii: Vec<f64>, mut f: F) -> Result<Self>
    where
        F: FnMut(f64, f64) -> Result<CorrelatorValue>,
    {
        let n = radii.len();
        let mut values = vec![0.0; n * n];
        let mut abs_err: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let c = f(radii[i], radii[j])?;
                values[i * n + j] = c.value;
                values[j * n + i] = c.value;
                abs_err = abs_err.max(c.abs_err);
            }
        }
        Ok(KernelMatrix { radii, values, abs_err })
    }

    /// Covariance of the stochastic potential energy m·V_st, i.e. m² times
    /// the potential correlator.
    pub fn energy(p: &SimParams, packet: &GaussianPacket, radii: Vec<f64>, geometry: KernelGeometry) -> Result<Self> {
        let m2 = p.mass * p.mass;
        Self::from_fn(radii, |r1, r2| {
            let c = stochastic_correlator(p, packet, r1, r2, geometry)?;
            Ok(CorrelatorValue { value: m2 * c.value, abs_err: m2 * c.abs_err })
        })
    }

    pub fn n(&self) -> usize {
        self.radii.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.n(), &self.values)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn psd_report(&self) -> PsdReport {
        let m = self.to_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym).eigenvalues;
        PsdReport { min_eig: eig.min(), max_eig: eig.max() }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        KernelMatrix {
            radii: self.radii.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            abs_err: self.abs_err * factor.abs(),
        }
    }
}
