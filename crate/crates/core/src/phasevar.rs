//! Phase variance between two points of a freely spreading Gaussian packet
//! under the stochastic potential, and the decoherence time it implies.
//!
//! With ΔP(t) = P(r₁) − P(r₂) and ΔJ(t) = J(r₁,r₁) + J(r₂,r₂) − 2J(r₁,r₂)
//! evaluated on the free density at time t, the variance is
//!
//!   Δφ² = (G²m⁴/ħ²)·[ (3/4)(∫₀ᵀ ΔP dt)² + (1/4)·T·∫₀ᵀ ΔJ dt ].
//!
//! The first group is the square of the deterministic mean-potential phase
//! difference (up to a factor); the second is the noise variance when the
//! noise is frozen over the window. [`phase_variance_parts`] separates them.

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::params::SimParams;
use crate::potential::{self_pair, single_center, two_center};
use crate::quad::{integrate, Tolerance};
use crate::special::{dawson, erf, ERFI_OVERFLOW, SQRT_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Quadrature,
    ClosedForm,
    Asymptote,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Quadrature => "quadrature",
            Method::ClosedForm => "closed_form",
            Method::Asymptote => "asymptote",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseVarianceResult {
    pub dphi2: f64,
    pub method: Method,
    pub mass: f64,
    pub width: f64,
    pub r1: f64,
    pub r2: f64,
    pub t: f64,
    pub abs_err: f64,
    /// The small-time condition holds at both radii with margin 0.01.
    pub small_time_ok: bool,
    /// Some r/a exceeded the range where unscaled erfi is representable.
    pub scaled_erfi_path: bool,
}

fn check_inputs(p: &SimParams, r1: f64, r2: f64, t: f64) -> Result<()> {
    p.validate()?;
    for (name, v) in [("r1", r1), ("r2", r2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, "must be finite and > 0"));
        }
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("T", "must be finite and >= 0"));
    }
    Ok(())
}

fn prefactor(p: &SimParams) -> f64 {
    let gm2 = p.g * p.mass * p.mass;
    gm2 * gm2 / (p.hbar * p.hbar)
}

pub const SMALL_TIME_MARGIN: f64 = 0.01;

fn small_time_ok(p: &SimParams, r1: f64, r2: f64, t: f64) -> bool {
    t <= small_time_bound(p, r1, SMALL_TIME_MARGIN) && t <= small_time_bound(p, r2, SMALL_TIME_MARGIN)
}

/// Largest T with e^{-r²/a²}(ħ²r/(m²a⁴))·T²/(3a√π) ≤ η·erf(r/a).
///
/// Evaluated in logarithms; returns +∞ once the bound itself overflows.
pub fn small_time_bound(p: &SimParams, r: f64, eta: f64) -> f64 {
    let (m, a, hbar) = (p.mass, p.width, p.hbar);
    let x = r / a;
    let log_t2 = (eta * erf(x) * 3.0 * a * SQRT_PI * m * m * a.powi(4) / (hbar * hbar * r)).ln() + x * x;
    (0.5 * log_t2).exp()
}

/// Integrated mean-phase and noise pieces of the variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseParts {
    /// ∫₀ᵀ ΔP dt
    pub int_dp: f64,
    /// ∫₀ᵀ ΔJ dt
    pub int_dj: f64,
    pub err_dp: f64,
    pub err_dj: f64,
    pub prefactor: f64,
    pub t: f64,
}

impl PhaseParts {
    /// Relative phase produced by the mean potential: (Gm²/ħ)∫ΔP dt.
    pub fn mean_phase(&self) -> f64 {
        self.prefactor.sqrt() * self.int_dp
    }

    /// Variance of the noise-induced relative phase for noise frozen over
    /// [0, T]: (G²m⁴/4ħ²)[T∫ΔJ − (∫ΔP)²].
    pub fn frozen_noise_variance(&self) -> f64 {
        0.25 * self.prefactor * (self.t * self.int_dj - self.int_dp * self.int_dp)
    }

    /// The full expression: (G²m⁴/ħ²)[(3/4)(∫ΔP)² + (1/4)T∫ΔJ].
    pub fn dphi2(&self) -> f64 {
        self.prefactor * (0.75 * self.int_dp * self.int_dp + 0.25 * self.t * self.int_dj)
    }

    pub fn abs_err(&self) -> f64 {
        self.prefactor * (1.5 * self.int_dp.abs() * self.err_dp + 0.25 * self.t * self.err_dj)
    }
}

/// Time integrals of ΔP and ΔJ over the free evolution, by adaptive
/// quadrature with the two-centre term from [`two_center`].
pub fn phase_variance_parts(p: &SimParams, r1: f64, r2: f64, t: f64) -> Result<PhaseParts> {
    check_inputs(p, r1, r2, t)?;
    let zero = PhaseParts { int_dp: 0.0, int_dj: 0.0, err_dp: 0.0, err_dj: 0.0, prefactor: prefactor(p), t };
    if t == 0.0 || r1 == r2 {
        return Ok(zero);
    }
    let tol = Tolerance::rel(1e-10);
    let width = |s: f64| p.packet(s).density_width();
    let dp = integrate(|s| single_center(width(s), r1) - single_center(width(s), r2), 0.0, t, tol)?;
    let mut inner_err: f64 = 0.0;
    let mut failure = None;
    let dj = integrate(
        |s| {
            let b = width(s);
            match two_center(b, r1, r2, Tolerance::rel(1e-12)) {
                Ok(j12) => {
                    inner_err = inner_err.max(j12.abs_err);
                    self_pair(b, r1) + self_pair(b, r2) - 2.0 * j12.value
                }
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        },
        0.0,
        t,
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let dj = dj?;
    Ok(PhaseParts {
        int_dp: dp.value,
        int_dj: dj.value,
        err_dp: dp.abs_err,
        err_dj: dj.abs_err + 2.0 * t * inner_err,
        prefactor: prefactor(p),
        t,
    })
}

pub fn phase_variance_quadrature(p: &SimParams, r1: f64, r2: f64, t: f64) -> Result<PhaseVarianceResult> {
    let parts = phase_variance_parts(p, r1, r2, t)?;
    Ok(PhaseVarianceResult {
        dphi2: parts.dphi2(),
        method: Method::Quadrature,
        mass: p.mass,
        width: p.width,
        r1,
        r2,
        t,
        abs_err: parts.abs_err(),
        small_time_ok: small_time_ok(p, r1, r2, t),
        scaled_erfi_path: false,
    })
}

/// The small-time closed form, including its perfect-square cross term:
///
///   (3/4)K T²(erf x₁/r₁ − erf x₂/r₂)²
///   + (1/4)K T²[2F(x₁)/(r₁a) + 2F(x₂)/(r₂a) − 4√(F(x₁)F(x₂))/(a√(r₁r₂))]
///
/// with K = G²m⁴/ħ², x = r/a and e^{-x²}erfi(x) = 2F(x)/√π throughout.
pub fn phase_variance_closed_form(p: &SimParams, r1: f64, r2: f64, t: f64) -> Result<PhaseVarianceResult> {
    check_inputs(p, r1, r2, t)?;
    let a = p.width;
    let (x1, x2) = (r1 / a, r2 / a);
    let mean = erf(x1) / r1 - erf(x2) / r2;
    let (f1, f2) = (dawson(x1), dawson(x2));
    let spread = 2.0 * f1 / (r1 * a) + 2.0 * f2 / (r2 * a) - 4.0 * (f1 * f2).sqrt() / (a * (r1 * r2).sqrt());
    let dphi2 = if r1 == r2 { 0.0 } else { prefactor(p) * t * t * (0.75 * mean * mean + 0.25 * spread) };
    Ok(PhaseVarianceResult {
        dphi2,
        method: Method::ClosedForm,
        mass: p.mass,
        width: p.width,
        r1,
        r2,
        t,
        abs_err: 16.0 * f64::EPSILON * dphi2.abs(),
        small_time_ok: small_time_ok(p, r1, r2, t),
        scaled_erfi_path: x1.max(x2) > ERFI_OVERFLOW,
    })
}

/// (G²m⁴/ħ²)T²(1/r₁ − 1/r₂)²
pub fn phase_variance_asymptote(p: &SimParams, r1: f64, r2: f64, t: f64) -> Result<PhaseVarianceResult> {
    check_inputs(p, r1, r2, t)?;
    let d = 1.0 / r1 - 1.0 / r2;
    let dphi2 = prefactor(p) * t * t * d * d;
    Ok(PhaseVarianceResult {
        dphi2,
        method: Method::Asymptote,
        mass: p.mass,
        width: p.width,
        r1,
        r2,
        t,
        abs_err: 4.0 * f64::EPSILON * dphi2,
        small_time_ok: small_time_ok(p, r1, r2, t),
        scaled_erfi_path: false,
    })
}

pub fn phase_variance(p: &SimParams, r1: f64, r2: f64, t: f64, method: Method) -> Result<PhaseVarianceResult> {
    match method {
        Method::Quadrature => phase_variance_quadrature(p, r1, r2, t),
        Method::ClosedForm => phase_variance_closed_form(p, r1, r2, t),
        Method::Asymptote => phase_variance_asymptote(p, r1, r2, t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceTime {
    /// √Λ ħ/ΔE; infinite when r₁ = r₂.
    pub time: f64,
    /// Gm²|1/r₁ − 1/r₂|
    pub delta_e: f64,
    /// 1/|1/r₁ − 1/r₂|, the length playing the role of a_c.
    pub coherence_length: f64,
}

/// Solve Δφ²(T) = Λ on the asymptote.
pub fn decoherence_time(p: &SimParams, r1: f64, r2: f64) -> Result<DecoherenceTime> {
    check_inputs(p, r1, r2, 0.0)?;
    let inv = (1.0 / r1 - 1.0 / r2).abs();
    let delta_e = p.g * p.mass * p.mass * inv;
    let time = if inv == 0.0 { f64::INFINITY } else { p.criterion_constant.sqrt() * p.hbar / delta_e };
    Ok(DecoherenceTime { time, delta_e, coherence_length: 1.0 / inv })
}

/// Coherence length implied by equating √Λħa/(Gm²) with ma²/ħ.
pub fn coherence_length_from_times(p: &SimParams) -> f64 {
    p.criterion_constant.sqrt() * p.hbar * p.hbar / (p.g * p.mass.powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bracket;
    use core::f64::consts::PI;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn unit() -> SimParams {
        SimParams::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn vanishing_cases() {
        let p = unit();
        for m in [Method::Quadrature, Method::ClosedForm, Method::Asymptote] {
            assert_eq!(phase_variance(&p, 3.0, 3.0, 0.4, m).unwrap().dphi2, 0.0);
            assert_eq!(phase_variance(&p, 2.0, 5.0, 0.0, m).unwrap().dphi2, 0.0);
        }
        let small = phase_variance_quadrature(&p, 2.0, 4.0, 1e-6).unwrap().dphi2;
        assert!(small < 1e-12);
    }

    #[test]
    fn symmetric_in_radii() {
        let p = unit();
        for m in [Method::Quadrature, Method::ClosedForm, Method::Asymptote] {
            let a = phase_variance(&p, 2.0, 5.0, 0.3, m).unwrap().dphi2;
            let b = phase_variance(&p, 5.0, 2.0, 0.3, m).unwrap().dphi2;
            assert!(rel(a, b) < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn asymptote_values() {
        let p = unit();
        let v = phase_variance_asymptote(&p, 1.0, 1e300, 1.0).unwrap().dphi2;
        assert!((v - 1.0).abs() < 1e-12);
        let a = phase_variance_asymptote(&p, 2.0, 3.0, 1.0).unwrap().dphi2;
        let b = phase_variance_asymptote(&p, 2.0, 3.0, 2.0).unwrap().dphi2;
        assert!(rel(b, 4.0 * a) < 1e-15);
    }

    #[test]
    fn closed_form_far_out_matches_asymptote() {
        let p = unit();
        let t = 0.05;
        assert!(t <= small_time_bound(&p, 8.0, SMALL_TIME_MARGIN));
        let c = phase_variance_closed_form(&p, 8.0, 16.0, t).unwrap();
        let a = phase_variance_asymptote(&p, 8.0, 16.0, t).unwrap();
        assert!(c.small_time_ok);
        assert!(rel(c.dphi2, a.dphi2) < 0.02);
        let far = phase_variance_closed_form(&p, 30.0, 60.0, t).unwrap();
        assert!(far.scaled_erfi_path && far.dphi2.is_finite());
    }

    #[test]
    fn quadrature_matches_closed_form_where_small_time_holds() {
        let p = unit();
        let q = phase_variance_quadrature(&p, 8.0, 16.0, 0.05).unwrap();
        let c = phase_variance_closed_form(&p, 8.0, 16.0, 0.05).unwrap();
        assert!(rel(q.dphi2, c.dphi2) < 0.01, "{} vs {}", q.dphi2, c.dphi2);
        let q = phase_variance_quadrature(&p, 2.0, 4.0, 0.05).unwrap();
        let c = phase_variance_closed_form(&p, 2.0, 4.0, 0.05).unwrap();
        assert!(rel(q.dphi2, c.dphi2) < 0.10, "{} vs {}", q.dphi2, c.dphi2);
    }

    #[test]
    fn quadrature_against_monte_carlo() {
        // Sample t uniformly on [0, T] and x from the free density at t:
        // ∫ΔP dt = T·E[1/|x−r₁| − 1/|x−r₂|], ∫ΔJ dt = T·E[(…)²].
        let p = unit();
        let (r1, r2, t) = (8.0, 16.0, 0.05);
        let mut rng = StdRng::seed_from_u64(11);
        let n = 400_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let s: f64 = rng.random::<f64>() * t;
            let sd = p.packet(s).density_width() / 2f64.sqrt();
            let mut v = [0.0; 3];
            for c in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c = sd * z;
            }
            let d1 = (v[0] * v[0] + v[1] * v[1] + (v[2] - r1).powi(2)).sqrt();
            let d2 = (v[0] * v[0] + v[1] * v[1] + (v[2] - r2).powi(2)).sqrt();
            let w = 1.0 / d1 - 1.0 / d2;
            s1 += w;
            s2 += w * w;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let sd = (s2 / nf - mean * mean).sqrt() / nf.sqrt();
        let idp = t * mean;
        let idj = t * s2 / nf;
        let mc = 0.75 * idp * idp + 0.25 * t * idj;
        let mc_err = 1.5 * idp.abs() * t * sd + 0.25 * t * t * 2.0 * mean.abs() * sd;
        let q = phase_variance_quadrature(&p, r1, r2, t).unwrap();
        assert!((q.dphi2 - mc).abs() < 3.0 * mc_err + q.abs_err, "{} vs {mc} ± {mc_err}", q.dphi2);
    }

    #[test]
    fn quadrature_is_stable_under_refinement() {
        let p = unit();
        let a = phase_variance_quadrature(&p, 2.0, 3.0, 0.7).unwrap();
        let parts = phase_variance_parts(&p, 2.0, 3.0, 0.7).unwrap();
        assert_eq!(a.dphi2, parts.dphi2());
        assert!(a.abs_err < 1e-8 * a.dphi2);
        // Split the window in two and recombine the integrals.
        let h = phase_variance_parts(&p, 2.0, 3.0, 0.35).unwrap();
        let full_dp = {
            let tol = Tolerance::rel(1e-12);
            integrate(
                |s| {
                    let b = p.packet(s).density_width();
                    single_center(b, 2.0) - single_center(b, 3.0)
                },
                0.35,
                0.7,
                tol,
            )
            .unwrap()
            .value
                + h.int_dp
        };
        assert!(rel(full_dp, parts.int_dp) < 1e-9);
    }

    #[test]
    fn parts_decompose_the_total() {
        let p = unit();
        let parts = phase_variance_parts(&p, 2.0, 4.0, 1.5).unwrap();
        let total = parts.mean_phase().powi(2) + parts.frozen_noise_variance();
        assert!(rel(total, parts.dphi2()) < 1e-12);
        assert!(parts.frozen_noise_variance() > 0.0);
    }

    #[test]
    fn bracket_limit() {
        // √π·x·e^{-x²}erfi(x) + 3erf²(x) = 2xF(x) + 3erf²(x)
        let v = bracket(8.0);
        assert!((v - 4.0).abs() / 4.0 < 0.01);
    }

    #[test]
    fn small_time_bound_values() {
        let p = unit();
        let want = (3.0 * SQRT_PI * 0.01 * erf(1.0) * 1f64.exp()).sqrt();
        assert!(rel(small_time_bound(&p, 1.0, 0.01), want) < 1e-14);
        let mut prev = 0.0;
        for i in 1..40 {
            let b = small_time_bound(&p, 0.25 * i as f64, 0.01);
            assert!(b > prev);
            prev = b;
        }
        assert!(small_time_bound(&p, 8.0, 0.01) / small_time_bound(&p, 1.0, 0.01) > 1e12);
    }

    #[test]
    fn decoherence_times() {
        let mut p = unit();
        p.criterion_constant = 1.0;
        let d = decoherence_time(&p, 1.0, 1e300).unwrap();
        assert!((d.time - 1.0).abs() < 1e-12);
        let d = decoherence_time(&p, 8.0, 16.0).unwrap();
        assert!((d.time - 16.0).abs() < 1e-12);
        assert!((d.time - p.hbar * d.coherence_length / (p.g * p.mass * p.mass)).abs() < 1e-12);
        let d2 = decoherence_time(&p.with_mass(2.0), 8.0, 16.0).unwrap();
        assert!(rel(d.time / d2.time, 4.0) < 1e-12);
        assert!(decoherence_time(&p, 3.0, 3.0).unwrap().time.is_infinite());
    }

    #[test]
    fn coherence_length_scaling() {
        let p = unit();
        let l1 = coherence_length_from_times(&p.with_mass(1.0));
        let l2 = coherence_length_from_times(&p.with_mass(2.0));
        assert!(rel(l1 / l2, 8.0) < 1e-12);
        assert!(rel(l1, PI * p.scales().critical_length) < 1e-12);
    }
}
