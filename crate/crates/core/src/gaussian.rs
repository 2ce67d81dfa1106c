//! The free spherical Gaussian packet and the acceleration-balance estimates
//! for a self-gravitating one.

use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::params::SimParams;
use crate::special::PI_POW_M32;

/// ψ(r, 0) = (πa²)^{-3/4} e^{-r²/2a²} evolved freely to `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    pub mass: f64,
    pub width: f64,
    pub hbar: f64,
    pub time: f64,
}

impl GaussianPacket {
    /// ħt/(ma²)
    pub fn tau(&self) -> f64 {
        self.hbar * self.time / (self.mass * self.width * self.width)
    }

    /// α(t) = 1/(1 + ħ²t²/m²a⁴)
    pub fn alpha(&self) -> f64 {
        let tau = self.tau();
        1.0 / (1.0 + tau * tau)
    }

    /// 1 + iħt/(ma²)
    pub fn width_factor(&self) -> Complex64 {
        Complex64::new(1.0, self.tau())
    }

    /// Width of |ψ|²: the density is ∝ exp(-r²/b²) with b = a/√α.
    pub fn density_width(&self) -> f64 {
        self.width / self.alpha().sqrt()
    }

    pub fn psi(&self, r: f64) -> Complex64 {
        let a = self.width;
        let w = self.width_factor();
        // (1+iτ)^{-3/2} through the logarithm: principal branch, no surprises
        // at large τ.
        let log_amp = -0.75 * (PI * a * a).ln();
        let expo = Complex64::new(log_amp, 0.0) - 1.5 * w.ln() - r * r / (2.0 * a * a * w);
        expo.exp()
    }

    pub fn psi_xyz(&self, x: f64, y: f64, z: f64) -> Complex64 {
        self.psi((x * x + y * y + z * z).sqrt())
    }

    /// |ψ(r)|², computed directly rather than from `psi`.
    pub fn density(&self, r: f64) -> f64 {
        let b = self.density_width();
        PI_POW_M32 / (b * b * b) * (-(r / b) * (r / b)).exp()
    }

    /// Maximum of the radial density 4πr²|ψ|².
    pub fn peak_radius(&self) -> f64 {
        let tau = self.tau();
        self.width * (1.0 + tau * tau).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelBalance {
    /// ħ²/(m² r_p³)
    pub quantum: f64,
    /// Gm/r_p²
    pub gravity_point: f64,
    /// Gm r_p/R³, present when an object size R was given.
    pub gravity_interior: Option<f64>,
}

impl AccelBalance {
    /// Positive when spreading wins over the point-mass pull.
    pub fn net_point(&self) -> f64 {
        self.quantum - self.gravity_point
    }
}

pub fn accel_balance(p: &SimParams, r_p: f64, size: Option<f64>) -> Result<AccelBalance> {
    p.validate()?;
    if !(r_p > 0.0 && r_p.is_finite()) {
        return Err(invalid("r_p", "must be finite and > 0"));
    }
    if let Some(s) = size {
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("size", "must be finite and > 0"));
        }
    }
    let m = p.mass;
    Ok(AccelBalance {
        quantum: p.hbar * p.hbar / (m * m * r_p.powi(3)),
        gravity_point: p.g * m / (r_p * r_p),
        gravity_interior: size.map(|s| p.g * m * r_p / s.powi(3)),
    })
}

/// Radius where ħ²/(m²r³) = Gm/r², i.e. ħ²/(Gm³).
pub fn point_balance_radius(p: &SimParams) -> f64 {
    p.scales().critical_length
}

/// Radius where ħ²/(m²r³) = Gm r/R³, i.e. (ħ²R³/(Gm³))^{1/4}.
pub fn interior_balance_radius(p: &SimParams, size: f64) -> f64 {
    (p.hbar * p.hbar * size.powi(3) / (p.g * p.mass.powi(3))).powf(0.25)
}
