//! Error-function family and Dawson's integral.
//!
//! erf and erfc come from libm. The scaled forms below avoid the overflow of
//! the unscaled ones: e^{-x²} erfi(x) grows like e^{x²} before scaling and
//! overflows a double near x ≈ 26.6.

#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// e^{x²} erfc(x).
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // May overflow for x < -26.6, as the true value does.
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 4.0 {
        return (x * x).exp() * erfc(x);
    }
    // Continued fraction, evaluated bottom-up.
    let mut f = x;
    for k in (1..=60).rev() {
        f = x + 0.5 * k as f64 / f;
    }
    FRAC_1_SQRT_PI / f
}

/// Dawson's integral F(x) = e^{-x²} ∫₀ˣ e^{t²} dt.
pub fn dawson(x: f64) -> f64 {
    if x < 0.0 {
        return -dawson(-x);
    }
    if x < 0.5 {
        // Alternating series x Σ (-2x²)^n / (2n+1)!!
        let x2 = x * x;
        let mut term = x;
        let mut sum = x;
        let mut n = 0;
        while term.abs() > 1e-17 * sum.abs() && n < 40 {
            n += 1;
            term *= -2.0 * x2 / (2 * n + 1) as f64;
            sum += term;
        }
        return sum;
    }
    if x > 50.0 {
        // 1/(2x) Σ (2n-1)!!/(2x²)^n
        let y = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..8 {
            term *= (2 * n - 1) as f64 * y;
            sum += term;
        }
        return sum / (2.0 * x);
    }
    // Rybicki's sampling formula: F(x) ≈ π^{-1/2} Σ_{n odd} e^{-(x-nh)²}/n.
    // With h = 0.2 the discretisation error is below e^{-(π/2h)²} ≈ 1e-27.
    const H: f64 = 0.2;
    let lo = (-6.2 / H).floor() as i64;
    let hi = ((x + 6.2) / H).ceil() as i64;
    let mut sum = 0.0;
    let mut n = lo | 1;
    while n <= hi {
        let d = x - n as f64 * H;
        sum += (-d * d).exp() / n as f64;
        n += 2;
    }
    sum * FRAC_1_SQRT_PI
}

/// e^{-x²} erfi(x) = 2F(x)/√π, finite for all x.
pub fn erfi_scaled(x: f64) -> f64 {
    2.0 * FRAC_1_SQRT_PI * dawson(x)
}

/// erfi(x) itself. Overflows to infinity beyond x ≈ 26.6.
pub fn erfi(x: f64) -> f64 {
    erfi_scaled(x) * (x * x).exp()
}

/// Where the unscaled erfi would overflow a double.
pub const ERFI_OVERFLOW: f64 = 26.0;

/// 2x F(x) + 3 erf(x)², the dimensionless bracket of the closed-form phase
/// variance with T = 1 and a single point. Tends to 4 as x → ∞.
pub fn bracket(x: f64) -> f64 {
    let e = erf(x);
    2.0 * x * dawson(x) + 3.0 * e * e
}

/// erf(x)/x with its finite limit 2/√π at x = 0.
pub fn erf_over_x(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        2.0 * FRAC_1_SQRT_PI * (1.0 - x2 / 3.0 + x2 * x2 / 10.0)
    } else {
        erf(x) / x
    }
}

/// Spherical Bessel j0(x) = sin x / x.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

pub(crate) const SQRT_PI: f64 = 1.772_453_850_905_516;
/// π^{-3/2}
pub(crate) const PI_POW_M32: f64 = 0.179_587_122_125_166_56;
