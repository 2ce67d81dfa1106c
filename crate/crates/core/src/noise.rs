//! Gaussian random fields with the stochastic-potential covariance.
//!
//! Samples are drawn as V = L z with L the symmetric square root of the
//! covariance. Randomness is counter-based: every (seed, trajectory, step)
//! triple maps to a fixed ChaCha stream position, so realizations do not
//! depend on thread scheduling or on how many trajectories ran before.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::params::SimParams;
use crate::potential::{KernelGeometry, KernelMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemporalMode {
    /// Independent in each step with variance C/Δt, so ∫V dt over a step has
    /// covariance C·Δt.
    White,
    /// Stationary AR(1) with marginal covariance C and lag correlation
    /// e^{-Δt/τ_c}.
    ExponentialMemory { tau_c: f64 },
}

impl TemporalMode {
    pub fn label(&self) -> &'static str {
        match self {
            TemporalMode::White => "white",
            TemporalMode::ExponentialMemory { .. } => "exponential_memory",
        }
    }

    /// f(τ) with ∫f = 1 for white noise (as a delta) and f(0) = 1 for memory.
    pub fn correlation(&self, tau: f64) -> f64 {
        match *self {
            TemporalMode::White => {
                if tau == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            TemporalMode::ExponentialMemory { tau_c } => (-tau.abs() / tau_c).exp(),
        }
    }
}

/// Where inside a step the kernel of a refreshed segment is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelTime {
    #[default]
    StepStart,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSegment {
    pub start_step: usize,
    pub kernel_time: f64,
    pub sqrt: DMatrix<f64>,
    pub clamped: usize,
}

/// Relative eigenvalue floor below which a kernel is rejected as not PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Symmetric square root of a covariance. Small negative eigenvalues from
/// round-off are clamped to zero and counted.
pub fn symmetric_sqrt(kernel: &KernelMatrix) -> Result<(DMatrix<f64>, usize)> {
    let c = kernel.to_matrix();
    let scale = c.amax();
    let asym = kernel.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if scale == 0.0 {
        return Ok((DMatrix::zeros(kernel.n(), kernel.n()), 0));
    }
    let sym = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL * max_eig {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    let mut clamped = 0;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clamped += 1;
            0.0
        } else {
            l.sqrt()
        }
    });
    let v = &eig.eigenvectors;
    let l = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((l, clamped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub radii: Vec<f64>,
    pub temporal: TemporalMode,
    pub dt: f64,
    pub seed: u64,
    /// Multiplies every sample; the covariance scales with its square.
    pub scale: f64,
    pub segments: Vec<FactorSegment>,
}

/// Options for a kernel that follows the spreading free packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    /// Largest relative change of α(t) tolerated before refactorizing.
    pub alpha_tol: f64,
    pub kernel_time: KernelTime,
    pub max_segments: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { alpha_tol: 0.01, kernel_time: KernelTime::StepStart, max_segments: 4096 }
    }
}

fn check_mode(temporal: TemporalMode, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", "must be finite and > 0"));
    }
    if let TemporalMode::ExponentialMemory { tau_c } = temporal {
        if !(tau_c > 0.0) {
            return Err(invalid("tau_c", "must be > 0"));
        }
    }
    Ok(())
}

impl NoiseModel {
    /// A model with one fixed covariance for all steps.
    pub fn build(kernel: &KernelMatrix, temporal: TemporalMode, dt: f64, seed: u64) -> Result<Self> {
        check_mode(temporal, dt)?;
        let (sqrt, clamped) = symmetric_sqrt(kernel)?;
        Ok(NoiseModel {
            radii: kernel.radii.clone(),
            temporal,
            dt,
            seed,
            scale: 1.0,
            segments: vec![FactorSegment { start_step: 0, kernel_time: 0.0, sqrt, clamped }],
        })
    }

    /// Energy covariance of the free packet, refactorized whenever α(t) has
    /// moved by more than `schedule.alpha_tol` since the last factorization.
    #[allow(clippy::too_many_arguments)]
    pub fn for_free_packet(
        p: &SimParams,
        radii: Vec<f64>,
        geometry: KernelGeometry,
        temporal: TemporalMode,
        dt: f64,
        n_steps: usize,
        seed: u64,
        schedule: Schedule,
    ) -> Result<Self> {
        check_mode(temporal, dt)?;
        let offset = match schedule.kernel_time {
            KernelTime::StepStart => 0.0,
            KernelTime::Midpoint => 0.5,
        };
        let time_of = |k: usize| (k as f64 + offset) * dt;
        let mut segments = Vec::new();
        let mut k = 0;
        while k < n_steps.max(1) {
            let t = time_of(k);
            let packet = p.packet(t);
            let kernel = KernelMatrix::energy(p, &packet, radii.clone(), geometry)?;
            let (sqrt, clamped) = symmetric_sqrt(&kernel)?;
            segments.push(FactorSegment { start_step: k, kernel_time: t, sqrt, clamped });
            if segments.len() > schedule.max_segments {
                return Err(invalid("alpha_tol", "refresh schedule needs too many factorizations"));
            }
            let a0 = packet.alpha();
            k += 1;
            while k < n_steps && (p.packet(time_of(k)).alpha() - a0).abs() <= schedule.alpha_tol * a0 {
                k += 1;
            }
        }
        Ok(NoiseModel { radii, temporal, dt, seed, scale: 1.0, segments })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn n_points(&self) -> usize {
        self.radii.len()
    }

    pub fn segment_at(&self, step: usize) -> &FactorSegment {
        let i = self.segments.partition_point(|s| s.start_step <= step);
        &self.segments[i.max(1) - 1]
    }

    pub fn clamped_total(&self) -> usize {
        self.segments.iter().map(|s| s.clamped).sum()
    }

    /// ‖LLᵀ − C‖_F / ‖C‖_F for the first segment against `kernel`.
    pub fn reconstruction_error(&self, kernel: &KernelMatrix) -> f64 {
        let l = &self.segments[0].sqrt;
        let c = kernel.to_matrix();
        (l * l.transpose() - &c).norm() / c.norm()
    }

    /// Standard normals for one step of one trajectory.
    pub fn normals(&self, trajectory: u64, step: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory);
        rng.set_word_pos((step as u128) << 32);
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }

    pub fn sample(&self, n_steps: usize, trajectory: u64) -> Result<NoiseRealization> {
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be > 0"));
        }
        let n = self.n_points();
        let mut values = vec![0.0; n_steps * n];
        let mut z = vec![0.0; n];
        let mut w = DVector::<f64>::zeros(n);
        let (rho, white_scale) = match self.temporal {
            TemporalMode::White => (0.0, self.scale / self.dt.sqrt()),
            TemporalMode::ExponentialMemory { tau_c } => ((-self.dt / tau_c).exp(), self.scale),
        };
        let kick = (1.0 - rho * rho).sqrt();
        for k in 0..n_steps {
            self.normals(trajectory, k, &mut z);
            match self.temporal {
                TemporalMode::White => w.copy_from_slice(&z),
                TemporalMode::ExponentialMemory { .. } => {
                    if k == 0 {
                        w.copy_from_slice(&z);
                    } else {
                        for (wi, zi) in w.iter_mut().zip(&z) {
                            *wi = rho * *wi + kick * zi;
                        }
                    }
                }
            }
            let v = &self.segment_at(k).sqrt * &w;
            for (dst, src) in values[k * n..(k + 1) * n].iter_mut().zip(v.iter()) {
                *dst = white_scale * src;
            }
        }
        Ok(NoiseRealization { radii: self.radii.clone(), values, n_steps, dt: self.dt, seed: self.seed, trajectory })
    }
}

/// One sampled field V(r_i, t_k), energy units, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub trajectory: u64,
}

impl NoiseRealization {
    pub fn n_points(&self) -> usize {
        self.radii.len()
    }

    pub fn row(&self, step: usize) -> &[f64] {
        let n = self.n_points();
        &self.values[step * n..(step + 1) * n]
    }

    /// A realization that is zero everywhere.
    pub fn zeros(radii: Vec<f64>, n_steps: usize, dt: f64) -> Self {
        let n = radii.len();
        NoiseRealization { radii, values: vec![0.0; n * n_steps], n_steps, dt, seed: 0, trajectory: 0 }
    }
}

/// Linear interpolation weights from a sorted set of noise radii onto
/// arbitrary target radii. Targets outside the noise radii take the nearest
/// end value.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolator {
    lower: Vec<usize>,
    weight: Vec<f64>,
}

impl Interpolator {
    pub fn new(source: &[f64], targets: &[f64]) -> Result<Self> {
        if source.is_empty() || source.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("radii", "noise radii must be strictly increasing"));
        }
        let n = source.len();
        let mut lower = Vec::with_capacity(targets.len());
        let mut weight = Vec::with_capacity(targets.len());
        for &r in targets {
            if n == 1 || r <= source[0] {
                lower.push(0);
                weight.push(0.0);
            } else if r >= source[n - 1] {
                lower.push(n - 2);
                weight.push(1.0);
            } else {
                let j = source.partition_point(|&s| s <= r) - 1;
                lower.push(j);
                weight.push((r - source[j]) / (source[j + 1] - source[j]));
            }
        }
        Ok(Interpolator { lower, weight })
    }

    pub fn apply(&self, row: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let j = self.lower[i];
            let w = self.weight[i];
            *o = if w == 0.0 { row[j] } else { (1.0 - w) * row[j] + w * row[j + 1] };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::CorrelatorValue;

    fn diag_kernel(s: &[f64]) -> KernelMatrix {
        let radii: Vec<f64> = (1..=s.len()).map(|i| i as f64).collect();
        let n = s.len();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = s[i] * s[i];
        }
        KernelMatrix::from_values(radii, v).unwrap()
    }

    #[test]
    fn diagonal_kernel_root() {
        let k = diag_kernel(&[1.0, 2.0, 0.5]);
        let (l, clamped) = symmetric_sqrt(&k).unwrap();
        assert_eq!(clamped, 0);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { [1.0, 2.0, 0.5][i] } else { 0.0 };
                assert!((l[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rank_one_reconstruction() {
        let v = [0.3, -1.2, 2.0, 0.7];
        let radii: Vec<f64> = (1..=4).map(|i| i as f64).collect();
        let k = KernelMatrix::from_fn(radii, |a, b| {
            Ok(CorrelatorValue { value: v[a as usize - 1] * v[b as usize - 1], abs_err: 0.0 })
        })
        .unwrap();
        let m = NoiseModel::build(&k, TemporalMode::White, 0.1, 1).unwrap();
        assert!(m.reconstruction_error(&k) < 1e-8);
    }

    #[test]
    fn rejects_bad_kernels() {
        let radii = std::vec![1.0, 2.0];
        let k = KernelMatrix::from_values(radii.clone(), std::vec![1.0, 0.5, 0.4, 1.0]).unwrap();
        assert!(matches!(symmetric_sqrt(&k), Err(Error::NotSymmetric { .. })));
        let k = KernelMatrix::from_values(radii, std::vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(symmetric_sqrt(&k), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn clamps_roundoff_negatives() {
        let radii = std::vec![1.0, 2.0];
        let k = KernelMatrix::from_values(radii, std::vec![1.0, 1.0 + 1e-13, 1.0 + 1e-13, 1.0]).unwrap();
        let (_, clamped) = symmetric_sqrt(&k).unwrap();
        assert_eq!(clamped, 1);
    }

    #[test]
    fn gaussian_kernel_reconstruction_64() {
        let p = SimParams::default();
        let radii: Vec<f64> = (1..=64).map(|i| 0.1 * i as f64).collect();
        let k = KernelMatrix::energy(&p, &p.packet(0.0), radii, KernelGeometry::Ray).unwrap();
        let m = NoiseModel::build(&k, TemporalMode::White, 0.01, 3).unwrap();
        assert!(m.reconstruction_error(&k) < 1e-8);
    }

    #[test]
    fn deterministic_and_stream_separated() {
        let k = diag_kernel(&[1.0, 1.0, 1.0]);
        let m = NoiseModel::build(&k, TemporalMode::White, 0.5, 99).unwrap();
        let a = m.sample(10, 4).unwrap();
        let b = m.sample(10, 4).unwrap();
        let c = m.sample(10, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        // A prefix of a longer run is the shorter run.
        let long = m.sample(20, 4).unwrap();
        assert_eq!(&long.values[..30], &a.values[..]);
        assert_ne!(
            m.sample(10, 4).unwrap().values,
            NoiseModel { seed: 100, ..m.clone() }.sample(10, 4).unwrap().values
        );
    }

    #[test]
    fn white_variance_and_mean() {
        let k = diag_kernel(&[2.0]);
        let dt = 0.25;
        let m = NoiseModel::build(&k, TemporalMode::White, dt, 5).unwrap();
        let r = m.sample(20_000, 0).unwrap();
        let n = r.values.len() as f64;
        let mean = r.values.iter().sum::<f64>() / n;
        let var = r.values.iter().map(|v| v * v).sum::<f64>() / n - mean * mean;
        let sigma = 2.0 / dt.sqrt();
        assert!(mean.abs() < 4.0 * sigma / n.sqrt());
        assert!((var / (sigma * sigma) - 1.0).abs() < 4.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn ar1_lag_correlation() {
        let k = diag_kernel(&[1.0]);
        let (dt, tau) = (0.1, 0.5);
        let m = NoiseModel::build(&k, TemporalMode::ExponentialMemory { tau_c: tau }, dt, 8).unwrap();
        let r = m.sample(200_000, 0).unwrap();
        let v = &r.values;
        let n = v.len();
        let var = v.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let lag = v.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1) as f64 / var;
        let rho = (-dt / tau).exp();
        // Standard error of a lag-1 estimate from an AR(1) series.
        let se = ((1.0 - rho * rho) / n as f64).sqrt();
        assert!((lag - rho).abs() < 3.0 * se, "{lag} vs {rho} ± {se}");
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn schedule_refreshes_as_packet_spreads() {
        let p = SimParams::default();
        let radii = std::vec![1.0, 2.0, 3.0];
        let m = NoiseModel::for_free_packet(
            &p,
            radii,
            KernelGeometry::Shell,
            TemporalMode::White,
            0.01,
            300,
            1,
            Schedule::default(),
        )
        .unwrap();
        assert!(m.segments.len() > 10);
        for w in m.segments.windows(2) {
            let a0 = p.packet(w[0].kernel_time).alpha();
            let a1 = p.packet(w[1].kernel_time).alpha();
            // Consecutive refreshes sit just past the tolerance.
            assert!((a1 - a0).abs() / a0 > 0.01 && (a1 - a0).abs() / a0 < 0.03);
        }
        assert_eq!(m.segment_at(0).start_step, 0);
        let last = m.segments.last().unwrap().start_step;
        assert_eq!(m.segment_at(299).start_step, last);
    }

    #[test]
    fn interpolation() {
        let it = Interpolator::new(&[1.0, 2.0, 4.0], &[0.0, 1.5, 3.0, 9.0]).unwrap();
        let mut out = [0.0; 4];
        it.apply(&[10.0, 20.0, 40.0], &mut out);
        assert_eq!(out, [10.0, 15.0, 30.0, 40.0]);
        assert!(Interpolator::new(&[1.0, 1.0], &[0.0]).is_err());
    }
}
