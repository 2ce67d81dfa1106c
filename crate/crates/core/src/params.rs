use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::gaussian::GaussianPacket;

/// Physical constants and the packet under study.
///
/// `mass` is the particle mass, `width` the initial Gaussian width a.
/// `criterion_constant` is Λ in the decoherence criterion Δφ² ≥ Λ and
/// `regime_ratio` is the factor ε that turns "≪" into a number when
/// classifying the micro and macro regimes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub mass: f64,
    pub width: f64,
    pub hbar: f64,
    pub g: f64,
    pub c: f64,
    pub criterion_constant: f64,
    pub regime_ratio: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams { mass: 1.0, width: 1.0, hbar: 1.0, g: 1.0, c: 1.0, criterion_constant: PI * PI, regime_ratio: 10.0 }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, alloc::format!("must be finite and > 0, got {v}")))
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        positive("mass", self.mass)?;
        positive("width", self.width)?;
        positive("hbar", self.hbar)?;
        positive("G", self.g)?;
        positive("c", self.c)?;
        positive("criterion_constant", self.criterion_constant)?;
        if !(self.regime_ratio.is_finite() && self.regime_ratio > 1.0) {
            return Err(invalid("regime_ratio", "must be finite and > 1"));
        }
        Ok(())
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    /// The free Gaussian packet at time `t`.
    pub fn packet(&self, t: f64) -> GaussianPacket {
        GaussianPacket { mass: self.mass, width: self.width, hbar: self.hbar, time: t }
    }

    pub fn scales(&self) -> DerivedScales {
        let (m, a, hbar, g) = (self.mass, self.width, self.hbar, self.g);
        DerivedScales {
            critical_length: hbar * hbar / (g * m * m * m),
            threshold_mass: (hbar * hbar / (g * a)).cbrt(),
            tau_spread: m * a * a / hbar,
            energy_scale: g * m * m / a,
        }
    }

    /// m³R in units of ħ²/G.
    fn regime_variable(&self, size: f64) -> f64 {
        self.g * self.mass.powi(3) * size / (self.hbar * self.hbar)
    }

    pub fn classify_regime(&self, size: f64) -> Result<Regime> {
        self.validate()?;
        positive("size", size)?;
        let x = self.regime_variable(size);
        Ok(if x <= 1.0 / self.regime_ratio {
            Regime::Micro
        } else if x >= self.regime_ratio {
            Regime::Macro
        } else {
            Regime::Transition
        })
    }

    /// Critical coherence length for an object of linear size `size`.
    ///
    /// Microscopic objects get ħ²/(Gm³); macroscopic ones get
    /// (ħ²/(Gm³))^{1/4} R^{3/4}. In the transition band the value is the
    /// geometric mean of the two and the result is flagged.
    pub fn critical_length_extended(&self, size: f64) -> Result<CriticalLength> {
        let regime = self.classify_regime(size)?;
        let micro = self.scales().critical_length;
        let macro_ = micro.powf(0.25) * size.powf(0.75);
        let value = match regime {
            Regime::Micro => micro,
            Regime::Macro => macro_,
            Regime::Transition => (micro * macro_).sqrt(),
        };
        Ok(CriticalLength {
            regime,
            value,
            micro_candidate: micro,
            macro_candidate: macro_,
            flagged: regime == Regime::Transition,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedScales {
    /// a_c = ħ²/(G m³)
    pub critical_length: f64,
    /// m_th = (ħ²/(G a))^{1/3}
    pub threshold_mass: f64,
    /// m a²/ħ
    pub tau_spread: f64,
    /// G m²/a
    pub energy_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Micro,
    Transition,
    Macro,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Micro => "micro",
            Regime::Transition => "transition",
            Regime::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalLength {
    pub regime: Regime,
    pub value: f64,
    pub micro_candidate: f64,
    pub macro_candidate: f64,
    pub flagged: bool,
}

/// Conversion of simulation quantities to SI for display only.
///
/// With ħ = G = 1 and the mass unit fixed to `mass_kg`, the length unit is
/// ħ²/(G M³) and the time unit M L²/ħ. Nothing in the numerics reads this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiUnits {
    pub mass_kg: f64,
    pub length_m: f64,
    pub time_s: f64,
}

pub const HBAR_SI: f64 = 1.054_571_817e-34;
pub const G_SI: f64 = 6.674_30e-11;

impl SiUnits {
    pub fn from_mass_unit(mass_kg: f64) -> Self {
        let length_m = HBAR_SI * HBAR_SI / (G_SI * mass_kg.powi(3));
        let time_s = mass_kg * length_m * length_m / HBAR_SI;
        SiUnits { mass_kg, length_m, time_s }
    }

    pub fn energy_j(&self) -> f64 {
        self.mass_kg * self.length_m * self.length_m / (self.time_s * self.time_s)
    }
}
