//! Monte-Carlo averages over noise realizations.
//!
//! Each trajectory records Ψ at a handful of probe radii; the ensemble keeps
//! a streaming mean and covariance of the upper triangle of ΨΨ† per recorded
//! time, from which ρ, its standard errors and the coherence
//! D(t) = |ρ₁₂| / sqrt(ρ₁₁ρ₂₂) follow.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::evolve::{EvolveConfig, Evolver, Mode};
use crate::grid::RadialState;
use crate::noise::{Interpolator, NoiseModel, Schedule, TemporalMode};
use crate::params::SimParams;
use crate::potential::{mean_potential_gaussian, KernelGeometry};
use crate::quad::gauss10;
use crate::stats::MultiWelford;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Full split-step evolution on the radial grid; probes snap to the
    /// nearest grid points.
    SplitStep,
    /// Ψ = ψ_free·exp(iφ) at the exact probe radii, with φ accumulated from
    /// the mean potential and the sampled noise. Linearized mode only.
    PhaseAnsatz,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::SplitStep => "split_step",
            Engine::PhaseAnsatz => "phase_ansatz",
        }
    }
}

/// Radii on which the noise field is sampled.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSupport {
    /// The probe radii themselves (no interpolation).
    Probes,
    /// Every interior point of the evolution grid.
    GridInterior,
    /// `n` cell-centred points spanning the grid.
    Uniform(usize),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub geometry: KernelGeometry,
    pub temporal: TemporalMode,
    pub schedule: Schedule,
    pub scale: f64,
    pub support: NoiseSupport,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            geometry: KernelGeometry::Ray,
            temporal: TemporalMode::White,
            schedule: Schedule::default(),
            scale: 1.0,
            support: NoiseSupport::Probes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub evolve: EvolveConfig,
    pub engine: Engine,
    pub n_trajectories: usize,
    pub seed: u64,
    pub probes: Vec<f64>,
    pub noise: NoiseSpec,
    pub max_failure_fraction: f64,
}

impl EnsembleConfig {
    pub fn new(evolve: EvolveConfig, engine: Engine, n_trajectories: usize, seed: u64, probes: Vec<f64>) -> Self {
        EnsembleConfig {
            evolve,
            engine,
            n_trajectories,
            seed,
            probes,
            noise: NoiseSpec::default(),
            max_failure_fraction: 0.01,
        }
    }
}

/// Ψ at every probe and recorded time for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    /// Row-major, records × probes.
    pub psi: Vec<Complex64>,
    /// max over recorded t > 0 of |‖Ψ(t)‖ − ‖Ψ(0)‖| / t
    pub norm_rate: f64,
}

/// Everything shared by the trajectories of one ensemble.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: SimParams,
    pub cfg: EnsembleConfig,
    pub noise: NoiseModel,
    /// Probe radii actually used (grid points for the split-step engine).
    pub probe_radii: Vec<f64>,
    probe_idx: Vec<usize>,
    pub record_steps: Vec<usize>,
    pub times: Vec<f64>,
    to_probes: Interpolator,
    psi_free: Vec<Complex64>,
    mean_inc: Vec<f64>,
}

fn record_steps(n_steps: usize, every: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=n_steps).step_by(every).collect();
    if *v.last().unwrap() != n_steps {
        v.push(n_steps);
    }
    v
}

impl Prepared {
    pub fn new(params: &SimParams, cfg: &EnsembleConfig) -> Result<Self> {
        params.validate()?;
        cfg.evolve.validate()?;
        let ev = &cfg.evolve;
        if !ev.mode.is_stochastic() {
            return Err(invalid("mode", "ensembles need a stochastic mode"));
        }
        if cfg.engine == Engine::PhaseAnsatz && ev.mode != Mode::StochasticLinearized {
            return Err(invalid("engine", "the phase-ansatz engine is only valid in linearized mode"));
        }
        if cfg.n_trajectories == 0 {
            return Err(invalid("n_trajectories", "must be > 0"));
        }
        if cfg.probes.is_empty() || cfg.probes.iter().any(|&r| !(r > 0.0)) {
            return Err(invalid("probes", "need at least one positive radius"));
        }
        if !(0.0..1.0).contains(&cfg.max_failure_fraction) {
            return Err(invalid("max_failure_fraction", "must lie in [0, 1)"));
        }
        let grid = ev.grid;
        let (probe_idx, probe_radii): (Vec<usize>, Vec<f64>) = match cfg.engine {
            Engine::SplitStep => {
                if cfg.probes.iter().any(|&r| r >= grid.r_max()) {
                    return Err(invalid("probes", "must lie inside the grid"));
                }
                cfg.probes.iter().map(|&r| (grid.nearest(r), grid.r(grid.nearest(r)))).unzip()
            }
            Engine::PhaseAnsatz => (Vec::new(), cfg.probes.clone()),
        };
        let support = match &cfg.noise.support {
            NoiseSupport::Probes => probe_radii.clone(),
            NoiseSupport::GridInterior => (1..grid.n - 1).map(|i| grid.r(i)).collect(),
            NoiseSupport::Uniform(n) => {
                if *n < 2 {
                    return Err(invalid("noise.support", "need at least two points"));
                }
                (0..*n).map(|i| (i as f64 + 0.5) * grid.r_max() / *n as f64).collect()
            }
            NoiseSupport::Explicit(r) => r.clone(),
        };
        let noise = NoiseModel::for_free_packet(
            params,
            support,
            cfg.noise.geometry,
            cfg.noise.temporal,
            ev.dt,
            ev.n_steps,
            cfg.seed,
            cfg.noise.schedule,
        )?
        .with_scale(cfg.noise.scale);
        let to_probes = Interpolator::new(&noise.radii, &probe_radii)?;
        let steps = record_steps(ev.n_steps, ev.record_every);
        let times: Vec<f64> = steps.iter().map(|&k| k as f64 * ev.dt).collect();
        let (mut psi_free, mut mean_inc) = (Vec::new(), Vec::new());
        if cfg.engine == Engine::PhaseAnsatz {
            for &t in &times {
                let pk = params.packet(t);
                psi_free.extend(probe_radii.iter().map(|&r| pk.psi(r)));
            }
            for k in 0..ev.n_steps {
                let (t0, t1) = (k as f64 * ev.dt, (k + 1) as f64 * ev.dt);
                for &r in &probe_radii {
                    mean_inc.push(gauss10(|s| mean_potential_gaussian(params, &params.packet(s), r), t0, t1));
                }
            }
        }
        Ok(Prepared {
            params: *params,
            cfg: cfg.clone(),
            noise,
            probe_radii,
            probe_idx,
            record_steps: steps,
            times,
            to_probes,
            psi_free,
            mean_inc,
        })
    }

    pub fn n_probes(&self) -> usize {
        self.probe_radii.len()
    }

    pub fn accumulator(&self) -> DensityAccumulator {
        DensityAccumulator::new(self.probe_radii.clone(), self.times.clone())
    }

    pub fn run_trajectory(&self, trajectory: u64) -> Result<TrajectoryRecord> {
        match self.cfg.engine {
            Engine::SplitStep => self.run_split_step(trajectory),
            Engine::PhaseAnsatz => self.run_phase_ansatz(trajectory),
        }
    }

    fn run_phase_ansatz(&self, trajectory: u64) -> Result<TrajectoryRecord> {
        let ev = &self.cfg.evolve;
        let np = self.n_probes();
        let real = self.noise.sample(ev.n_steps, trajectory)?;
        let hbar = self.params.hbar;
        let mut phase = vec![0.0; np];
        let mut row = vec![0.0; np];
        let mut psi = Vec::with_capacity(self.record_steps.len() * np);
        let mut next = 0;
        for k in 0..=ev.n_steps {
            if self.record_steps.get(next) == Some(&k) {
                for j in 0..np {
                    psi.push(self.psi_free[next * np + j] * Complex64::from_polar(1.0, phase[j]));
                }
                next += 1;
            }
            if k == ev.n_steps {
                break;
            }
            self.to_probes.apply(real.row(k), &mut row);
            for j in 0..np {
                phase[j] -= (self.mean_inc[k * np + j] + row[j] * ev.dt) / hbar;
            }
        }
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { t: ev.n_steps as f64 * ev.dt });
        }
        Ok(TrajectoryRecord { trajectory, psi, norm_rate: 0.0 })
    }

    fn run_split_step(&self, trajectory: u64) -> Result<TrajectoryRecord> {
        let ev = &self.cfg.evolve;
        let real = self.noise.sample(ev.n_steps, trajectory)?;
        let mut evolver = Evolver::new(self.params, ev.clone())?;
        let mut state = RadialState::from_gaussian(ev.grid, &self.params.packet(0.0));
        let norm0 = state.norm().sqrt();
        let mut psi = Vec::with_capacity(self.record_steps.len() * self.n_probes());
        let mut norm_rate: f64 = 0.0;
        let mut next = 0;
        for k in 0..=ev.n_steps {
            if self.record_steps.get(next) == Some(&k) {
                psi.extend(self.probe_idx.iter().map(|&i| state.psi(i)));
                if state.t > 0.0 {
                    norm_rate = norm_rate.max((state.norm().sqrt() - norm0).abs() / state.t);
                }
                next += 1;
            }
            if k == ev.n_steps {
                break;
            }
            evolver.step(&mut state, k, Some(&real))?;
        }
        Ok(TrajectoryRecord { trajectory, psi, norm_rate })
    }
}

/// Position of the moments of ΨΨ† in the accumulated vector: |Ψ_i|² first,
/// then (Re, Im) of Ψ_iΨ_j* for i < j in row order.
fn pair_offset(np: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < np);
    np + 2 * (i * (2 * np - i - 1) / 2 + (j - i - 1))
}

/// Streaming ensemble state; merge partial accumulators in any grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityAccumulator {
    pub probe_radii: Vec<f64>,
    pub times: Vec<f64>,
    pub slices: Vec<MultiWelford>,
    pub failed: usize,
    pub max_norm_rate: f64,
    scratch: Vec<f64>,
}

impl DensityAccumulator {
    pub fn new(probe_radii: Vec<f64>, times: Vec<f64>) -> Self {
        let np = probe_radii.len();
        let dim = np * np;
        DensityAccumulator {
            slices: vec![MultiWelford::new(dim); times.len()],
            probe_radii,
            times,
            failed: 0,
            max_norm_rate: 0.0,
            scratch: vec![0.0; dim],
        }
    }

    pub fn n_ok(&self) -> u64 {
        self.slices.first().map_or(0, |s| s.n)
    }

    pub fn push(&mut self, rec: &TrajectoryRecord) {
        let np = self.probe_radii.len();
        for (k, slice) in self.slices.iter_mut().enumerate() {
            let psi = &rec.psi[k * np..(k + 1) * np];
            for i in 0..np {
                self.scratch[i] = psi[i].norm_sqr();
                for j in i + 1..np {
                    let z = psi[i] * psi[j].conj();
                    let o = pair_offset(np, i, j);
                    self.scratch[o] = z.re;
                    self.scratch[o + 1] = z.im;
                }
            }
            slice.push(&self.scratch);
        }
        self.max_norm_rate = self.max_norm_rate.max(rec.norm_rate);
    }

    /// Fold one trajectory outcome in. Blow-ups are counted and skipped;
    /// any other error is returned.
    pub fn absorb(&mut self, outcome: Result<TrajectoryRecord>) -> Result<()> {
        match outcome {
            Ok(rec) => {
                self.push(&rec);
                Ok(())
            }
            Err(Error::NonFinite { .. } | Error::NormDrift { .. } | Error::StepTooLarge { .. }) => {
                self.failed += 1;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    pub fn merge(&mut self, other: &DensityAccumulator) {
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.merge(b);
        }
        self.failed += other.failed;
        self.max_norm_rate = self.max_norm_rate.max(other.max_norm_rate);
    }

    /// Apply the failure policy and freeze the result.
    pub fn finish(self, max_failure_fraction: f64) -> Result<EnsembleResult> {
        let total = self.failed + self.n_ok() as usize;
        if self.failed as f64 > max_failure_fraction * total as f64 || self.n_ok() == 0 {
            return Err(Error::TooManyFailures { failed: self.failed, total });
        }
        Ok(EnsembleResult {
            probe_radii: self.probe_radii,
            times: self.times,
            slices: self.slices,
            failed: self.failed,
            max_norm_rate: self.max_norm_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub probe_radii: Vec<f64>,
    pub times: Vec<f64>,
    pub slices: Vec<MultiWelford>,
    pub failed: usize,
    pub max_norm_rate: f64,
}

/// ρ(r_i, r_j) on the probe radii at one time, Hermitian by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDensityMatrix {
    pub radii: Vec<f64>,
    pub t: f64,
    pub n: u64,
    /// Row-major.
    pub values: Vec<Complex64>,
    /// Standard error of each entry (modulus of the complex error).
    pub stderr: Vec<f64>,
}

impl EnsembleDensityMatrix {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.radii.len() + j]
    }

    /// Σ w_i ρ_ii, e.g. 4π r_i² h to check normalization on a full grid.
    pub fn weighted_trace(&self, weights: &[f64]) -> f64 {
        weights.iter().enumerate().map(|(i, w)| w * self.get(i, i).re).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceDecay {
    pub r1: f64,
    pub r2: f64,
    pub n: u64,
    pub times: Vec<f64>,
    pub d: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl EnsembleResult {
    pub fn n(&self) -> u64 {
        self.slices.first().map_or(0, |s| s.n)
    }

    pub fn density_matrix(&self, k: usize) -> EnsembleDensityMatrix {
        let np = self.probe_radii.len();
        let s = &self.slices[k];
        let mut values = vec![Complex64::new(0.0, 0.0); np * np];
        let mut stderr = vec![0.0; np * np];
        for i in 0..np {
            values[i * np + i] = Complex64::new(s.mean[i], 0.0);
            stderr[i * np + i] = s.stderr(i);
            for j in i + 1..np {
                let o = pair_offset(np, i, j);
                let z = Complex64::new(s.mean[o], s.mean[o + 1]);
                let e = s.stderr(o).hypot(s.stderr(o + 1));
                values[i * np + j] = z;
                values[j * np + i] = z.conj();
                stderr[i * np + j] = e;
                stderr[j * np + i] = e;
            }
        }
        EnsembleDensityMatrix { radii: self.probe_radii.clone(), t: self.times[k], n: s.n, values, stderr }
    }

    /// D(t) for probes i ≠ j, with delta-method standard errors.
    pub fn coherence_decay(&self, i: usize, j: usize) -> Result<CoherenceDecay> {
        let np = self.probe_radii.len();
        if i == j || i >= np || j >= np {
            return Err(invalid("pair", "need two distinct probe indices"));
        }
        let (i, j) = (i.min(j), i.max(j));
        let o = pair_offset(np, i, j);
        let mut d = Vec::with_capacity(self.times.len());
        let mut stderr = Vec::with_capacity(self.times.len());
        for s in &self.slices {
            let (a, b, y1, y2) = (s.mean[o], s.mean[o + 1], s.mean[i], s.mean[j]);
            let x = a.hypot(b);
            let den = (y1 * y2).sqrt();
            let dv = x / den;
            let mut grad = vec![(i, -0.5 * dv / y1), (j, -0.5 * dv / y2)];
            if x > 0.0 {
                grad.push((o, a / (x * den)));
                grad.push((o + 1, b / (x * den)));
            }
            d.push(dv);
            stderr.push(s.delta_stderr(&grad));
        }
        Ok(CoherenceDecay {
            r1: self.probe_radii[i],
            r2: self.probe_radii[j],
            n: self.n(),
            times: self.times.clone(),
            d,
            stderr,
        })
    }
}

/// Sequential ensemble run; trajectories use streams 0..N of the seed.
pub fn run_ensemble(params: &SimParams, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    let prep = Prepared::new(params, cfg)?;
    let mut acc = prep.accumulator();
    for i in 0..cfg.n_trajectories as u64 {
        acc.absorb(prep.run_trajectory(i))?;
    }
    acc.finish(cfg.max_failure_fraction)
}

/// Gaussian-phase prediction of the decay rate κ in D = exp(−κt²/2).
pub fn predicted_rate(p: &SimParams, r1: f64, r2: f64) -> f64 {
    let e = p.g * p.mass * p.mass * (1.0 / r1 - 1.0 / r2) / p.hbar;
    e * e
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// D fell below the threshold at this (interpolated) time.
    At(f64),
    /// No crossing within the run; T exceeds this.
    LowerBound(f64),
}

impl Crossing {
    pub fn time(self) -> f64 {
        match self {
            Crossing::At(t) | Crossing::LowerBound(t) => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceEstimate {
    pub threshold: f64,
    pub crossing: Crossing,
    /// κ from a weighted least-squares fit of ln D = −κt²/2 through the origin.
    pub kappa: f64,
    pub fit_time: f64,
    /// rms of ln D − (−κt²/2) over the fitted points
    pub fit_residual: f64,
    pub fit_points: usize,
    pub predicted_kappa: f64,
    pub predicted_time: f64,
    /// Steps where D rose by more than three standard errors.
    pub revivals: usize,
}

/// Points with D below this, or within three standard errors of zero, are
/// too noisy to enter the log fit.
pub const FIT_FLOOR: f64 = 1e-3;

pub fn extract_decoherence_time(
    decay: &CoherenceDecay,
    lambda: f64,
    predicted_kappa: f64,
) -> Result<DecoherenceEstimate> {
    if !(lambda > 0.0) {
        return Err(invalid("criterion_constant", "must be > 0"));
    }
    if decay.times.len() < 2 {
        return Err(invalid("decay", "need at least two recorded times"));
    }
    let threshold = (-lambda / 2.0).exp();
    let mut crossing = Crossing::LowerBound(*decay.times.last().unwrap());
    for k in 1..decay.times.len() {
        let (d0, d1) = (decay.d[k - 1], decay.d[k]);
        if d0 >= threshold && d1 < threshold {
            let (t0, t1) = (decay.times[k - 1], decay.times[k]);
            crossing = Crossing::At(t0 + (t1 - t0) * (d0 - threshold) / (d0 - d1));
            break;
        }
    }
    // Weighted by 1/var(ln D) = (D/σ_D)² when every point carries an error.
    let weighted = decay.times.iter().zip(&decay.stderr).all(|(&t, &e)| t == 0.0 || e > 0.0);
    let (mut s24, mut s4) = (0.0, 0.0);
    let mut pts = Vec::new();
    for k in 0..decay.times.len() {
        let (t, d, e) = (decay.times[k], decay.d[k], decay.stderr[k]);
        if t > 0.0 && d > FIT_FLOOR && d > 3.0 * e && d < 1.0 {
            let t2 = t * t;
            let w = if weighted { (d / e).powi(2) } else { 1.0 };
            s24 += w * t2 * d.ln();
            s4 += w * t2 * t2;
            pts.push((t2, d.ln()));
        }
    }
    let kappa = if s4 > 0.0 { -2.0 * s24 / s4 } else { 0.0 };
    let fit_residual = if pts.is_empty() {
        0.0
    } else {
        (pts.iter().map(|(t2, l)| (l + 0.5 * kappa * t2).powi(2)).sum::<f64>() / pts.len() as f64).sqrt()
    };
    let fit_time = if kappa > 0.0 { (lambda / kappa).sqrt() } else { f64::INFINITY };
    let revivals = (1..decay.d.len())
        .filter(|&k| decay.d[k] - decay.d[k - 1] > 3.0 * decay.stderr[k].hypot(decay.stderr[k - 1]))
        .count();
    Ok(DecoherenceEstimate {
        threshold,
        crossing,
        kappa,
        fit_time,
        fit_residual,
        fit_points: pts.len(),
        predicted_kappa,
        predicted_time: (lambda / predicted_kappa).sqrt(),
        revivals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    /// Largest |D − model| in units of the combined standard error.
    pub max_z: f64,
    pub worst_time: f64,
    pub n_outside: usize,
    pub n_points: usize,
}

/// Compare D(t) against a model curve with its own error, point by point.
/// A point is outside when it misses by more than `n_sigma` combined errors;
/// points with zero combined error must agree to 1e-12.
pub fn equivalence(
    decay: &CoherenceDecay,
    model: &[f64],
    model_err: &[f64],
    n_sigma: f64,
) -> Result<EquivalenceReport> {
    if model.len() != decay.d.len() || model_err.len() != decay.d.len() {
        return Err(invalid("model", "length must match the decay series"));
    }
    let mut rep = EquivalenceReport { max_z: 0.0, worst_time: 0.0, n_outside: 0, n_points: model.len() };
    for k in 0..model.len() {
        let diff = (decay.d[k] - model[k]).abs();
        let sigma = decay.stderr[k].hypot(model_err[k]);
        let (z, outside) = if sigma > 0.0 {
            (diff / sigma, diff > n_sigma * sigma)
        } else {
            (if diff > 1e-12 { f64::INFINITY } else { 0.0 }, diff > 1e-12)
        };
        if z > rep.max_z {
            rep.max_z = z;
            rep.worst_time = decay.times[k];
        }
        rep.n_outside += outside as usize;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RadialGrid;
    use crate::stats::linear_fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ansatz_cfg(n: usize, scale: f64) -> EnsembleConfig {
        let grid = RadialGrid::new(64, 32.0).unwrap();
        let mut ev = EvolveConfig::new(Mode::StochasticLinearized, grid, 0.05, 40);
        ev.record_every = 4;
        let mut cfg = EnsembleConfig::new(ev, Engine::PhaseAnsatz, n, 11, std::vec![2.0, 4.0, 6.0]);
        cfg.noise.scale = scale;
        cfg
    }

    #[test]
    fn zero_noise_and_single_member_stay_pure() {
        let p = SimParams::default();
        for (n, scale) in [(50, 0.0), (1, 1.0)] {
            let res = run_ensemble(&p, &ansatz_cfg(n, scale)).unwrap();
            let dec = res.coherence_decay(0, 2).unwrap();
            for d in &dec.d {
                assert!((d - 1.0).abs() < 1e-12, "n={n} scale={scale}: {d}");
            }
        }
    }

    #[test]
    fn density_matrix_is_hermitian_with_real_diagonal() {
        let p = SimParams::default();
        let res = run_ensemble(&p, &ansatz_cfg(30, 1.0)).unwrap();
        let rho = res.density_matrix(res.times.len() - 1);
        for i in 0..3 {
            assert_eq!(rho.get(i, i).im, 0.0);
            assert!(rho.get(i, i).re >= 0.0);
            for j in 0..3 {
                assert_eq!(rho.get(i, j), rho.get(j, i).conj());
            }
        }
        // Analytic free density at the probes, which the phases leave alone.
        let pk = p.packet(rho.t);
        assert!((rho.get(1, 1).re - pk.density(4.0)).abs() < 1e-14);
    }

    #[test]
    fn stderr_scales_as_inverse_root_n() {
        let p = SimParams::default();
        let (mut xs, mut ys) = (std::vec::Vec::new(), std::vec::Vec::new());
        for n in [100usize, 400, 1600] {
            let res = run_ensemble(&p, &ansatz_cfg(n, 1.0)).unwrap();
            let rho = res.density_matrix(res.times.len() - 1);
            xs.push((n as f64).ln());
            ys.push(rho.stderr[2].ln());
        }
        let (slope, _) = linear_fit(&xs, &ys);
        assert!((slope + 0.5).abs() < 0.1, "{slope}");
    }

    #[test]
    fn merged_halves_match_sequential() {
        let p = SimParams::default();
        let cfg = ansatz_cfg(40, 1.0);
        let prep = Prepared::new(&p, &cfg).unwrap();
        let mut all = prep.accumulator();
        let (mut a, mut b) = (prep.accumulator(), prep.accumulator());
        for i in 0..40u64 {
            let r = prep.run_trajectory(i).unwrap();
            all.push(&r);
            if i % 3 == 0 {
                a.push(&r)
            } else {
                b.push(&r)
            }
        }
        b.merge(&a);
        let (x, y) = (all.finish(0.01).unwrap(), b.finish(0.01).unwrap());
        let (dx, dy) = (x.coherence_decay(0, 1).unwrap(), y.coherence_decay(0, 1).unwrap());
        for k in 0..dx.d.len() {
            assert!((dx.d[k] - dy.d[k]).abs() < 1e-12);
            assert!((dx.stderr[k] - dy.stderr[k]).abs() < 1e-12);
        }
        // Same seed and stream give the same trajectory.
        assert_eq!(prep.run_trajectory(7).unwrap(), prep.run_trajectory(7).unwrap());
    }

    #[test]
    fn synthetic_gaussian_phases_recover_rate() {
        let kappa = 0.37;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40000;
        let z: std::vec::Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let times: std::vec::Vec<f64> = (0..=40).map(|k| 0.1 * k as f64).collect();
        let (mut d, mut se) = (std::vec::Vec::new(), std::vec::Vec::new());
        for &t in &times {
            // Relative phase with variance κt².
            let s = kappa.sqrt() * t;
            let (mut c, mut c2) = (0.0, 0.0);
            for &zi in &z {
                let v = (s * zi).cos();
                c += v;
                c2 += v * v;
            }
            let m = c / n as f64;
            d.push(m.abs());
            se.push(((c2 / n as f64 - m * m) / n as f64).sqrt());
        }
        let dec = CoherenceDecay { r1: 1.0, r2: 2.0, n: n as u64, times, d, stderr: se };
        let est = extract_decoherence_time(&dec, 1.0, kappa).unwrap();
        assert!((est.kappa / kappa - 1.0).abs() < 0.02, "{}", est.kappa);
        assert!((est.fit_time / est.predicted_time - 1.0).abs() < 0.02);
        match est.crossing {
            Crossing::At(t) => assert!((t / est.predicted_time - 1.0).abs() < 0.02),
            Crossing::LowerBound(_) => panic!("no crossing"),
        }
        assert_eq!(est.revivals, 0);
    }

    #[test]
    fn no_crossing_reports_lower_bound() {
        let dec = CoherenceDecay {
            r1: 1.0,
            r2: 2.0,
            n: 10,
            times: std::vec![0.0, 1.0, 2.0],
            d: std::vec![1.0, 0.99, 0.98],
            stderr: std::vec![0.0, 0.001, 0.001],
        };
        let est = extract_decoherence_time(&dec, core::f64::consts::PI.powi(2), 1.0).unwrap();
        assert_eq!(est.crossing, Crossing::LowerBound(2.0));
        let model = [1.0, 0.99, 0.985];
        let rep = equivalence(&dec, &model, &[0.0; 3], 3.0).unwrap();
        assert_eq!(rep.n_outside, 1);
        assert_eq!(rep.worst_time, 2.0);
    }

    #[test]
    fn split_step_agrees_with_phase_ansatz_at_weak_coupling() {
        let p = SimParams { g: 0.05, ..SimParams::default() };
        let grid = RadialGrid::new(801, 20.0).unwrap();
        let mut ev = EvolveConfig::new(Mode::StochasticLinearized, grid, 0.005, 100);
        ev.record_every = 20;
        let probes = std::vec![grid.r(grid.nearest(1.0)), grid.r(grid.nearest(2.0))];
        let mut cfg = EnsembleConfig::new(ev, Engine::SplitStep, 24, 3, probes);
        cfg.noise.temporal = TemporalMode::ExponentialMemory { tau_c: 10.0 };
        let a = run_ensemble(&p, &cfg).unwrap();
        cfg.engine = Engine::PhaseAnsatz;
        let b = run_ensemble(&p, &cfg).unwrap();
        let (da, db) = (a.coherence_decay(0, 1).unwrap(), b.coherence_decay(0, 1).unwrap());
        for k in 0..da.d.len() {
            assert!((da.d[k] - db.d[k]).abs() < 2e-3, "{} vs {}", da.d[k], db.d[k]);
        }
        assert!(a.max_norm_rate < 1e-6, "{}", a.max_norm_rate);
    }

    #[test]
    fn blow_ups_trip_the_failure_policy() {
        let p = SimParams::default();
        let grid = RadialGrid::new(101, 10.0).unwrap();
        let ev = EvolveConfig::new(Mode::StochasticLinearized, grid, 0.01, 5);
        let mut cfg = EnsembleConfig::new(ev, Engine::SplitStep, 10, 1, std::vec![1.0, 2.0]);
        cfg.noise.scale = 1e6;
        assert!(matches!(run_ensemble(&p, &cfg), Err(Error::TooManyFailures { failed: 10, total: 10 })));
        let mut acc = DensityAccumulator::new(std::vec![1.0], std::vec![0.0]);
        assert!(acc.absorb(Err(Error::Shape("x".into()))).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let p = SimParams::default();
        let mut cfg = ansatz_cfg(10, 1.0);
        cfg.evolve.mode = Mode::StochasticSn;
        assert!(Prepared::new(&p, &cfg).is_err());
        let mut cfg = ansatz_cfg(10, 1.0);
        cfg.evolve.mode = Mode::Free;
        assert!(Prepared::new(&p, &cfg).is_err());
        let mut cfg = ansatz_cfg(0, 1.0);
        assert!(Prepared::new(&p, &cfg).is_err());
        cfg.n_trajectories = 3;
        cfg.probes.clear();
        assert!(Prepared::new(&p, &cfg).is_err());
    }
}
