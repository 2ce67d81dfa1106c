//! Run configuration: a TOML file plus `--set key=value` overrides.
//!
//! Physical parameters sit at the top level; every subcommand reads its own
//! table. Unknown keys are errors, so a typo cannot silently fall back to a
//! default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stochsn_core::ensemble::{Engine, NoiseSpec, NoiseSupport};
use stochsn_core::evolve::{Absorber, EvolveConfig, Mode};
use stochsn_core::grid::RadialGrid;
use stochsn_core::mastereq::{KSpacing, Structure};
use stochsn_core::noise::{KernelTime, Schedule, TemporalMode};
use stochsn_core::phasevar::Method;
use stochsn_core::potential::KernelGeometry;
use stochsn_core::SimParams;

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub mass: f64,
    pub width: f64,
    pub hbar: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub c: f64,
    pub criterion_constant: f64,
    pub regime_ratio: f64,
    pub seed: u64,
    pub scales: ScalesCfg,
    pub phasevar: PhasevarCfg,
    pub evolve: EvolveCfg,
    pub noise: NoiseCfg,
    pub ensemble: EnsembleCfg,
    pub master: MasterCfg,
    pub sweep: SweepCfg,
}

impl Default for Config {
    fn default() -> Self {
        let p = SimParams::default();
        Config {
            mass: p.mass,
            width: p.width,
            hbar: p.hbar,
            g: p.g,
            c: p.c,
            criterion_constant: p.criterion_constant,
            regime_ratio: p.regime_ratio,
            seed: 1,
            scales: ScalesCfg::default(),
            phasevar: PhasevarCfg::default(),
            evolve: EvolveCfg::default(),
            noise: NoiseCfg::default(),
            ensemble: EnsembleCfg::default(),
            master: MasterCfg::default(),
            sweep: SweepCfg::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalesCfg {
    /// Object size R for the regime classification; defaults to the width.
    pub size: Option<f64>,
    /// Extra masses to tabulate next to the configured one.
    pub masses: Vec<f64>,
    /// Display SI values with this mass unit (kg); numerics are unaffected.
    pub si_mass_unit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Quadrature,
    ClosedForm,
    Asymptote,
    All,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Quadrature => vec![Method::Quadrature],
            MethodChoice::ClosedForm => vec![Method::ClosedForm],
            MethodChoice::Asymptote => vec![Method::Asymptote],
            MethodChoice::All => vec![Method::Quadrature, Method::ClosedForm, Method::Asymptote],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhasevarCfg {
    pub r1: f64,
    pub r2: f64,
    /// Explicit times; when empty, `points` times evenly up to `t_max`.
    pub times: Vec<f64>,
    pub t_max: f64,
    pub points: usize,
    pub method: MethodChoice,
}

impl Default for PhasevarCfg {
    fn default() -> Self {
        PhasevarCfg { r1: 8.0, r2: 16.0, times: Vec::new(), t_max: 0.05, points: 12, method: MethodChoice::All }
    }
}

impl PhasevarCfg {
    pub fn time_list(&self) -> Vec<f64> {
        if !self.times.is_empty() {
            return self.times.clone();
        }
        (1..=self.points).map(|i| self.t_max * i as f64 / self.points as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeChoice {
    Free,
    Sn,
    StochasticSn,
    StochasticLinearized,
}

impl From<ModeChoice> for Mode {
    fn from(m: ModeChoice) -> Mode {
        match m {
            ModeChoice::Free => Mode::Free,
            ModeChoice::Sn => Mode::Sn,
            ModeChoice::StochasticSn => Mode::StochasticSn,
            ModeChoice::StochasticLinearized => Mode::StochasticLinearized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveCfg {
    pub mode: ModeChoice,
    pub dt: f64,
    /// Run length; the step count is t_final/dt rounded to the nearest step.
    pub t_final: f64,
    pub grid_points: usize,
    pub r_max: f64,
    pub record_every: usize,
    pub snapshot_every: usize,
    pub absorber_width: f64,
    pub absorber_strength: f64,
    pub max_step_drift: f64,
    /// Prominence for turning-point detection in the width series.
    pub oscillation_prominence: f64,
    /// Window for the initial slope/curvature fit of r_p(t).
    pub trend_window: f64,
}

impl Default for EvolveCfg {
    fn default() -> Self {
        EvolveCfg {
            mode: ModeChoice::Free,
            dt: 0.005,
            t_final: 3.0,
            grid_points: 2001,
            r_max: 40.0,
            record_every: 10,
            snapshot_every: 0,
            absorber_width: 0.0,
            absorber_strength: 0.0,
            max_step_drift: 1e-4,
            oscillation_prominence: 0.01,
            trend_window: 0.2,
        }
    }
}

impl EvolveCfg {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn build(&self) -> Result<EvolveConfig, LabError> {
        check(self.dt > 0.0 && self.dt.is_finite(), "evolve.dt", "must be finite and > 0")?;
        check(self.t_final > 0.0 && self.t_final.is_finite(), "evolve.t_final", "must be finite and > 0")?;
        check(self.n_steps() > 0, "evolve.t_final", "is shorter than one step")?;
        check(self.r_max > 0.0, "evolve.r_max", "must be > 0")?;
        let grid = RadialGrid::new(self.grid_points, self.r_max)?;
        let mut cfg = EvolveConfig::new(self.mode.into(), grid, self.dt, self.n_steps());
        cfg.record_every = self.record_every;
        cfg.snapshot_every = self.snapshot_every;
        cfg.max_step_drift = self.max_step_drift;
        if self.absorber_width > 0.0 {
            cfg.absorber = Some(Absorber { width: self.absorber_width, strength: self.absorber_strength });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryChoice {
    Ray,
    Shell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalChoice {
    White,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportChoice {
    Probes,
    Grid,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelTimeChoice {
    StepStart,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseCfg {
    pub geometry: GeometryChoice,
    pub temporal: TemporalChoice,
    pub tau_c: f64,
    pub scale: f64,
    pub alpha_tol: f64,
    pub kernel_time: KernelTimeChoice,
    pub max_segments: usize,
    pub support: SupportChoice,
    pub support_points: usize,
}

impl Default for NoiseCfg {
    fn default() -> Self {
        NoiseCfg {
            geometry: GeometryChoice::Ray,
            temporal: TemporalChoice::White,
            tau_c: 1.0,
            scale: 1.0,
            alpha_tol: 0.01,
            kernel_time: KernelTimeChoice::StepStart,
            max_segments: 4096,
            support: SupportChoice::Probes,
            support_points: 64,
        }
    }
}

impl NoiseCfg {
    pub fn temporal_mode(&self) -> Result<TemporalMode, LabError> {
        Ok(match self.temporal {
            TemporalChoice::White => TemporalMode::White,
            TemporalChoice::Exponential => {
                check(self.tau_c > 0.0 && self.tau_c.is_finite(), "noise.tau_c", "must be finite and > 0")?;
                TemporalMode::ExponentialMemory { tau_c: self.tau_c }
            }
        })
    }

    pub fn geometry(&self) -> KernelGeometry {
        match self.geometry {
            GeometryChoice::Ray => KernelGeometry::Ray,
            GeometryChoice::Shell => KernelGeometry::Shell,
        }
    }

    pub fn build(&self) -> Result<NoiseSpec, LabError> {
        check(self.scale >= 0.0 && self.scale.is_finite(), "noise.scale", "must be finite and ≥ 0")?;
        check(self.alpha_tol > 0.0, "noise.alpha_tol", "must be > 0")?;
        Ok(NoiseSpec {
            geometry: self.geometry(),
            temporal: self.temporal_mode()?,
            schedule: Schedule {
                alpha_tol: self.alpha_tol,
                kernel_time: match self.kernel_time {
                    KernelTimeChoice::StepStart => KernelTime::StepStart,
                    KernelTimeChoice::Midpoint => KernelTime::Midpoint,
                },
                max_segments: self.max_segments,
            },
            scale: self.scale,
            support: match self.support {
                SupportChoice::Probes => NoiseSupport::Probes,
                SupportChoice::Grid => NoiseSupport::GridInterior,
                SupportChoice::Uniform => NoiseSupport::Uniform(self.support_points),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    PhaseAnsatz,
    SplitStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleCfg {
    pub engine: EngineChoice,
    pub mode: ModeChoice,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub trajectories: usize,
    pub probes: Vec<f64>,
    /// Indices into `probes` of the pair whose coherence is tracked.
    pub pair: [usize; 2],
    pub max_failure_fraction: f64,
    /// Add exp(−Δφ²/2) from the quadrature to the decay table.
    pub compare_phasevar: bool,
    /// Write ρ on the probes as CSV as well as binary when there are at most
    /// this many probes.
    pub rho_csv_max_probes: usize,
}

impl Default for EnsembleCfg {
    fn default() -> Self {
        EnsembleCfg {
            engine: EngineChoice::PhaseAnsatz,
            mode: ModeChoice::StochasticLinearized,
            dt: 0.05,
            t_final: 150.0,
            record_every: 20,
            trajectories: 400,
            probes: vec![8.0, 16.0],
            pair: [0, 1],
            max_failure_fraction: 0.01,
            compare_phasevar: true,
            rho_csv_max_probes: 16,
        }
    }
}

impl EnsembleCfg {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn engine(&self) -> Engine {
        match self.engine {
            EngineChoice::PhaseAnsatz => Engine::PhaseAnsatz,
            EngineChoice::SplitStep => Engine::SplitStep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSpacingChoice {
    Sine,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureChoice {
    AsPrinted,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterCfg {
    /// Total points of the toy radial grid, ends included.
    pub grid_points: usize,
    pub r_max: f64,
    pub k_spacing: KSpacingChoice,
    pub k_points: usize,
    /// Kernel geometry for the toy grid; the temporal part comes from `noise`.
    pub geometry: GeometryChoice,
    pub structure: StructureChoice,
    /// γ in units of (G/(2π²ħ))².
    pub gamma_scale: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub mean_field: bool,
    pub trace_tol: f64,
    /// Also run the linearized split-step ensemble on the same toy grid.
    pub compare_ensemble: bool,
    pub pair: [usize; 2],
}

impl Default for MasterCfg {
    fn default() -> Self {
        MasterCfg {
            grid_points: 10,
            r_max: 4.5,
            k_spacing: KSpacingChoice::Sine,
            k_points: 16,
            geometry: GeometryChoice::Shell,
            structure: StructureChoice::AsPrinted,
            gamma_scale: 1.0,
            dt: 0.005,
            t_final: 2.0,
            record_every: 40,
            mean_field: true,
            trace_tol: 1e-2,
            compare_ensemble: false,
            pair: [1, 5],
        }
    }
}

impl MasterCfg {
    pub fn spacing(&self) -> KSpacing {
        match self.k_spacing {
            KSpacingChoice::Sine => KSpacing::Sine,
            KSpacingChoice::Log => KSpacing::Log(self.k_points),
        }
    }

    pub fn geometry(&self) -> KernelGeometry {
        match self.geometry {
            GeometryChoice::Ray => KernelGeometry::Ray,
            GeometryChoice::Shell => KernelGeometry::Shell,
        }
    }

    pub fn structure(&self) -> Structure {
        match self.structure {
            StructureChoice::AsPrinted => Structure::AsPrinted,
            StructureChoice::Completed => Structure::Completed,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepCfg {
    /// Top-level key to vary; only `mass` and `width` are supported.
    pub key: String,
    pub values: Vec<f64>,
    /// Run length as a multiple of the predicted decoherence time.
    pub t_final_factor: f64,
    /// Steps per predicted decoherence time.
    pub steps_per_time: usize,
}

impl Default for SweepCfg {
    fn default() -> Self {
        SweepCfg { key: "mass".into(), values: vec![0.5, 1.0, 2.0], t_final_factor: 3.0, steps_per_time: 400 }
    }
}

fn check(ok: bool, key: &'static str, reason: &str) -> Result<(), LabError> {
    if ok {
        Ok(())
    } else {
        Err(LabError::Config(format!("{key}: {reason}")))
    }
}

impl Config {
    pub fn params(&self) -> SimParams {
        SimParams {
            mass: self.mass,
            width: self.width,
            hbar: self.hbar,
            g: self.g,
            c: self.c,
            criterion_constant: self.criterion_constant,
            regime_ratio: self.regime_ratio,
        }
    }

    /// Check everything that can be checked without running numerics.
    pub fn validate(&self) -> Result<(), LabError> {
        self.params().validate()?;
        let pv = &self.phasevar;
        check(pv.r1 > 0.0 && pv.r2 > 0.0, "phasevar.r1/r2", "must be > 0")?;
        check(
            !pv.times.is_empty() || (pv.points > 0 && pv.t_max > 0.0),
            "phasevar",
            "need times or t_max > 0 with points > 0",
        )?;
        check(pv.time_list().iter().all(|&t| t >= 0.0 && t.is_finite()), "phasevar.times", "must be finite and ≥ 0")?;
        self.evolve.build()?;
        self.noise.build()?;
        let en = &self.ensemble;
        check(en.trajectories > 0, "ensemble.trajectories", "must be > 0")?;
        check(en.dt > 0.0 && en.t_final > 0.0 && en.n_steps() > 0, "ensemble.dt/t_final", "must be > 0")?;
        check(en.record_every > 0, "ensemble.record_every", "must be > 0")?;
        check(
            !matches!(en.mode, ModeChoice::Free | ModeChoice::Sn),
            "ensemble.mode",
            "must be stochastic_sn or stochastic_linearized",
        )?;
        check(en.probes.len() >= 2, "ensemble.probes", "need at least two radii")?;
        check(en.probes.iter().all(|&r| r > 0.0), "ensemble.probes", "must be > 0")?;
        check(
            en.pair[0] != en.pair[1] && en.pair.iter().all(|&i| i < en.probes.len()),
            "ensemble.pair",
            "must be two distinct indices into probes",
        )?;
        check((0.0..1.0).contains(&en.max_failure_fraction), "ensemble.max_failure_fraction", "must lie in [0, 1)")?;
        let m = &self.master;
        check(m.grid_points >= 6, "master.grid_points", "need at least 6")?;
        check(m.dt > 0.0 && m.t_final > 0.0 && m.n_steps() > 0, "master.dt/t_final", "must be > 0")?;
        check(m.gamma_scale >= 0.0, "master.gamma_scale", "must be ≥ 0")?;
        check(m.record_every > 0, "master.record_every", "must be > 0")?;
        check(
            m.pair[0] != m.pair[1] && m.pair.iter().all(|&i| i + 2 < m.grid_points),
            "master.pair",
            "must be two distinct interior indices",
        )?;
        let s = &self.sweep;
        check(s.key == "mass" || s.key == "width", "sweep.key", "must be mass or width")?;
        check(s.values.iter().all(|&v| v > 0.0), "sweep.values", "must be > 0")?;
        check(
            s.t_final_factor > 0.0 && s.steps_per_time > 0,
            "sweep",
            "t_final_factor and steps_per_time must be > 0",
        )?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Apply `a.b.c=value` to a TOML table, creating tables on the way.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), LabError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LabError::Config(format!("bad key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| LabError::Config(format!("{part} in {key:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// Resolve a config from optional file text and overrides, then validate.
pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Config, LabError> {
    let mut table: toml::Table = match text {
        Some(t) => t.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: Config = table.try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, LabError> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| LabError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    resolve(text.as_deref(), overrides)
}
