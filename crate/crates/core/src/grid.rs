//! Uniform radial grid and the reduced wavefunction u = rψ living on it.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianPacket;

/// r_i = i·h for i = 0..n. Both ends carry Dirichlet conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGrid {
    pub n: usize,
    pub h: f64,
}

impl RadialGrid {
    pub fn new(n: usize, r_max: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::GridTooCoarse { points: n, min: 4 });
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(invalid("r_max", "must be finite and > 0"));
        }
        Ok(RadialGrid { n, h: r_max / (n - 1) as f64 })
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn r_max(&self) -> f64 {
        self.r(self.n - 1)
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.r(i)).collect()
    }

    /// Grid index closest to `r`, restricted to the interior.
    pub fn nearest(&self, r: f64) -> usize {
        let i = (r / self.h).round();
        (i.max(1.0) as usize).min(self.n - 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialState {
    pub grid: RadialGrid,
    pub u: Vec<Complex64>,
    pub t: f64,
}

impl RadialState {
    pub fn from_fn<F: Fn(f64) -> Complex64>(grid: RadialGrid, psi: F, t: f64) -> Self {
        let mut u: Vec<Complex64> = (0..grid.n).map(|i| psi(grid.r(i)) * grid.r(i)).collect();
        u[0] = Complex64::new(0.0, 0.0);
        u[grid.n - 1] = Complex64::new(0.0, 0.0);
        RadialState { grid, u, t }
    }

    pub fn from_gaussian(grid: RadialGrid, packet: &GaussianPacket) -> Self {
        Self::from_fn(grid, |r| packet.psi(r), packet.time)
    }

    /// 4π Σ|u|² h. On the uniform grid with zero ends this is also the
    /// trapezoid rule.
    pub fn norm(&self) -> f64 {
        4.0 * PI * self.grid.h * self.u.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn normalize(&mut self) {
        let s = 1.0 / self.norm().sqrt();
        for z in self.u.iter_mut() {
            *z *= s;
        }
    }

    /// ψ(r_i) = u_i/r_i, with ψ(0) extrapolated from u₁/r₁.
    pub fn psi(&self, i: usize) -> Complex64 {
        if i == 0 {
            self.u[1] / self.grid.h
        } else {
            self.u[i] / self.grid.r(i)
        }
    }

    /// Radius of the maximum of the radial density |u|², refined by a
    /// parabola through the three samples around the discrete maximum.
    pub fn peak_radius(&self) -> f64 {
        let d: Vec<f64> = self.u.iter().map(|z| z.norm_sqr()).collect();
        let mut k = 1;
        for i in 1..d.len() - 1 {
            if d[i] > d[k] {
                k = i;
            }
        }
        let k = k.clamp(1, d.len() - 2);
        let (l, c, r) = (d[k - 1], d[k], d[k + 1]);
        let denom = l - 2.0 * c + r;
        let shift = if denom < 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
        (k as f64 + shift.clamp(-0.5, 0.5)) * self.grid.h
    }

    /// ⟨r²⟩^{1/2}
    pub fn rms_radius(&self) -> f64 {
        let h = self.grid.h;
        let s: f64 = self.u.iter().enumerate().map(|(i, z)| (i as f64 * h).powi(2) * z.norm_sqr()).sum();
        (4.0 * PI * h * s / self.norm()).sqrt()
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > tol || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}
