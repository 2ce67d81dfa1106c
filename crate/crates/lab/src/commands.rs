//! Subcommands: each `compute_*` returns an in-memory report, each `write_*`
//! turns it into files under the output directory. [`execute`] does both and
//! records a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;
use stochsn_core::ensemble::{
    equivalence, extract_decoherence_time, predicted_rate, CoherenceDecay, Crossing, DecoherenceEstimate,
    EnsembleConfig, EnsembleResult, EquivalenceReport, NoiseSupport,
};
use stochsn_core::evolve::{analyze_oscillation, evolve_run, initial_trend, Oscillation, Trajectory};
use stochsn_core::grid::{RadialGrid, RadialState};
use stochsn_core::mastereq::{
    build_dkernel, evolve_master, gamma_of, initial_gaussian, KGrid, MasterConfig, MasterResult,
};
use stochsn_core::noise::{NoiseModel, NoiseRealization};
use stochsn_core::params::{CriticalLength, DerivedScales, SiUnits};
use stochsn_core::phasevar::{decoherence_time, phase_variance, phase_variance_quadrature, PhaseVarianceResult};
use stochsn_core::stats::linear_fit;
use stochsn_core::SimParams;

use crate::config::{Config, EngineChoice, SupportChoice, TemporalChoice};
use crate::io::{write_blocks, write_csv, Block, BlockKind, Cell, Header};
use crate::manifest::{file_sha256, input_hash, versions, OutputFile, RunManifest};
use crate::parallel::{run_ensemble, with_threads};
use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Scales,
    Phasevar,
    Evolve,
    Ensemble,
    Master,
    Sweep,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Scales => "scales",
            Command::Phasevar => "phasevar",
            Command::Evolve => "evolve",
            Command::Ensemble => "ensemble",
            Command::Master => "master",
            Command::Sweep => "sweep",
        }
    }
}

/// Where and under which hash a run writes.
pub struct RunContext {
    pub command: Command,
    pub out_dir: PathBuf,
    pub hash: String,
    pub params: SimParams,
    pub seed: u64,
    /// Temporal noise structure, flagged as a model choice in every header.
    pub noise_model: String,
}

impl RunContext {
    pub fn new(command: Command, cfg: &Config, out_dir: &Path) -> Self {
        RunContext {
            command,
            out_dir: out_dir.to_path_buf(),
            hash: input_hash(command.as_str(), cfg),
            params: cfg.params(),
            seed: cfg.seed,
            noise_model: match cfg.noise.temporal {
                TemporalChoice::White => "white".to_string(),
                TemporalChoice::Exponential => format!("exponential(tau_c={})", cfg.noise.tau_c),
            },
        }
    }

    /// CSV header lines: the hash plus the physical parameters, so plots can
    /// draw reference curves without the config.
    pub fn header(&self) -> Header {
        let p = &self.params;
        let mut h = vec![
            ("manifest_hash".to_string(), self.hash.clone()),
            ("command".to_string(), self.command.as_str().to_string()),
        ];
        for (k, v) in [
            ("mass", p.mass),
            ("width", p.width),
            ("hbar", p.hbar),
            ("G", p.g),
            ("c", p.c),
            ("criterion_constant", p.criterion_constant),
            ("regime_ratio", p.regime_ratio),
        ] {
            h.push((k.to_string(), crate::io::fmt_f64(v)));
        }
        h.push(("seed".to_string(), self.seed.to_string()));
        h.push(("model_choice.noise_temporal".to_string(), self.noise_model.clone()));
        h
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        hex::decode_to_slice(&self.hash, &mut out).expect("hash is 64 hex digits");
        out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn csv(
        &self,
        name: &str,
        extra: &[(&str, String)],
        columns: &[&str],
        rows: &[Vec<Cell>],
    ) -> Result<PathBuf, LabError> {
        let mut h = self.header();
        h.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        let path = self.path(name);
        write_csv(&path, &h, columns, rows)?;
        Ok(path)
    }

    fn json(&self, name: &str, mut value: serde_json::Value) -> Result<PathBuf, LabError> {
        value["manifest_hash"] = json!(self.hash);
        value["command"] = json!(self.command.as_str());
        value["model_choice"] = json!({ "noise_temporal": self.noise_model });
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&value).map_err(|e| LabError::Config(e.to_string()))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

// ---------------------------------------------------------------- scales

#[derive(Debug, Clone, PartialEq)]
pub struct ScalesRow {
    pub mass: f64,
    pub scales: DerivedScales,
    pub size: f64,
    pub critical: CriticalLength,
    /// The same scale with √Λ kept, from equating the two time scales.
    pub coherence_length_lambda: f64,
}

pub fn compute_scales(cfg: &Config) -> Result<Vec<ScalesRow>, LabError> {
    let base = cfg.params();
    let size = cfg.scales.size.unwrap_or(base.width);
    let mut masses = vec![base.mass];
    masses.extend(cfg.scales.masses.iter().copied());
    masses
        .into_iter()
        .map(|m| {
            let p = base.with_mass(m);
            Ok(ScalesRow {
                mass: m,
                scales: p.scales(),
                size,
                critical: p.critical_length_extended(size)?,
                coherence_length_lambda: stochsn_core::phasevar::coherence_length_from_times(&p),
            })
        })
        .collect()
}

pub fn write_scales(ctx: &RunContext, cfg: &Config, rows: &[ScalesRow]) -> Result<Vec<PathBuf>, LabError> {
    let si = cfg.scales.si_mass_unit.map(SiUnits::from_mass_unit);
    let mut columns = vec![
        "mass",
        "width",
        "a_c",
        "m_th",
        "tau_spread",
        "energy_scale",
        "size",
        "regime",
        "critical_length",
        "flagged",
        "a_c_lambda",
    ];
    if si.is_some() {
        columns.extend(["mass_kg", "a_c_m", "m_th_kg", "tau_spread_s"]);
    }
    let table: Vec<Vec<Cell>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.mass.into(),
                ctx.params.width.into(),
                r.scales.critical_length.into(),
                r.scales.threshold_mass.into(),
                r.scales.tau_spread.into(),
                r.scales.energy_scale.into(),
                r.size.into(),
                r.critical.regime.as_str().into(),
                r.critical.value.into(),
                r.critical.flagged.into(),
                r.coherence_length_lambda.into(),
            ];
            if let Some(u) = si {
                row.extend([
                    (r.mass * u.mass_kg).into(),
                    (r.scales.critical_length * u.length_m).into(),
                    (r.scales.threshold_mass * u.mass_kg).into(),
                    (r.scales.tau_spread * u.time_s).into(),
                ]);
            }
            row
        })
        .collect();
    println!("{:>12} {:>12} {:>12} {:>12} {:>11} {:>12}", "mass", "a_c", "m_th", "tau_spread", "regime", "L_crit");
    for r in rows {
        println!(
            "{:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>11} {:>12.5e}{}",
            r.mass,
            r.scales.critical_length,
            r.scales.threshold_mass,
            r.scales.tau_spread,
            r.critical.regime.as_str(),
            r.critical.value,
            if r.critical.flagged { "  (flagged)" } else { "" }
        );
        if let Some(u) = si {
            println!(
                "{:>12} a_c = {:.4e} m, m_th = {:.4e} kg, tau_spread = {:.4e} s",
                "SI:",
                r.scales.critical_length * u.length_m,
                r.scales.threshold_mass * u.mass_kg,
                r.scales.tau_spread * u.time_s
            );
        }
    }
    Ok(vec![ctx.csv("scales.csv", &[], &columns, &table)?])
}

// ---------------------------------------------------------------- phasevar

pub fn compute_phasevar(cfg: &Config) -> Result<Vec<PhaseVarianceResult>, LabError> {
    let p = cfg.params();
    let pv = &cfg.phasevar;
    let mut out = Vec::new();
    for method in pv.method.methods() {
        for &t in &pv.time_list() {
            out.push(phase_variance(&p, pv.r1, pv.r2, t, method)?);
        }
    }
    Ok(out)
}

pub const PHASEVAR_COLUMNS: [&str; 10] =
    ["method", "m", "a", "r1", "r2", "T", "dphi2", "err", "small_time_ok", "scaled_erfi_path"];

fn phasevar_row(r: &PhaseVarianceResult) -> Vec<Cell> {
    vec![
        r.method.as_str().into(),
        r.mass.into(),
        r.width.into(),
        r.r1.into(),
        r.r2.into(),
        r.t.into(),
        r.dphi2.into(),
        r.abs_err.into(),
        r.small_time_ok.into(),
        r.scaled_erfi_path.into(),
    ]
}

pub fn write_phasevar(ctx: &RunContext, cfg: &Config, rows: &[PhaseVarianceResult]) -> Result<Vec<PathBuf>, LabError> {
    let table: Vec<Vec<Cell>> = rows.iter().map(phasevar_row).collect();
    let dt = decoherence_time(&ctx.params, cfg.phasevar.r1, cfg.phasevar.r2)?;
    println!("predicted decoherence time {:.6e} (ΔE = {:.6e})", dt.time, dt.delta_e);
    for r in rows {
        println!(
            "{:<12} T = {:.5e}  dphi2 = {:.10e}  err = {:.2e}{}",
            r.method.as_str(),
            r.t,
            r.dphi2,
            r.abs_err,
            if r.small_time_ok { "" } else { "  (outside small-time bound)" }
        );
    }
    let extra = [("predicted_T", crate::io::fmt_f64(dt.time))];
    Ok(vec![ctx.csv("phasevar.csv", &extra, &PHASEVAR_COLUMNS, &table)?])
}

// ---------------------------------------------------------------- evolve

#[derive(Debug, Clone)]
pub struct EvolveReport {
    pub trajectory: Trajectory,
    pub noise: Option<NoiseRealization>,
    /// (slope, curvature) of r_p at t = 0⁺.
    pub trend: (f64, f64),
    pub oscillation: Oscillation,
    /// max |r_p − r_p,free| / r_p,free against the analytic free packet.
    pub free_peak_deviation: f64,
}

fn evolve_noise_radii(cfg: &Config, grid: &RadialGrid) -> Vec<f64> {
    let n = cfg.noise.support_points;
    match cfg.noise.support {
        SupportChoice::Grid => (1..grid.n - 1).map(|i| grid.r(i)).collect(),
        // There are no probes in a single run; fall back to a uniform support.
        SupportChoice::Probes | SupportChoice::Uniform => {
            (0..n.max(2)).map(|i| (i as f64 + 0.5) * grid.r_max() / n.max(2) as f64).collect()
        }
    }
}

pub fn compute_evolve(cfg: &Config) -> Result<EvolveReport, LabError> {
    let p = cfg.params();
    let ev = cfg.evolve.build()?;
    let initial = RadialState::from_gaussian(ev.grid, &p.packet(0.0));
    let noise = if ev.mode.is_stochastic() {
        let spec = cfg.noise.build()?;
        let model = NoiseModel::for_free_packet(
            &p,
            evolve_noise_radii(cfg, &ev.grid),
            spec.geometry,
            spec.temporal,
            ev.dt,
            ev.n_steps,
            cfg.seed,
            spec.schedule,
        )?
        .with_scale(spec.scale);
        Some(model.sample(ev.n_steps, 0)?)
    } else {
        None
    };
    let trajectory = evolve_run(&p, &initial, &ev, noise.as_ref())?;
    let trend = initial_trend(&trajectory.samples, cfg.evolve.trend_window);
    let oscillation = analyze_oscillation(&trajectory.samples, cfg.evolve.oscillation_prominence);
    let free_peak_deviation = trajectory
        .samples
        .iter()
        .map(|s| {
            let r = p.packet(s.t).peak_radius();
            (s.r_p - r).abs() / r
        })
        .fold(0.0, f64::max);
    Ok(EvolveReport { trajectory, noise, trend, oscillation, free_peak_deviation })
}

fn state_block(ctx: &RunContext, s: &RadialState, dt: f64) -> Block {
    Block {
        kind: BlockKind::State,
        run_hash: ctx.hash_bytes(),
        grid_n: s.grid.n as u64,
        grid_h: s.grid.h,
        dt,
        seed: ctx.seed,
        stream: 0,
        t: s.t,
        rows: 1,
        cols: 2 * s.u.len() as u64,
        aux: Vec::new(),
        data: s.u.iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

pub fn write_evolve(ctx: &RunContext, cfg: &Config, rep: &EvolveReport) -> Result<Vec<PathBuf>, LabError> {
    let mut files = Vec::new();
    let rows: Vec<Vec<Cell>> =
        rep.trajectory.samples.iter().map(|s| vec![s.t.into(), s.r_p.into(), s.norm.into(), s.energy.into()]).collect();
    let extra = [
        ("mode", format!("{:?}", cfg.evolve.mode).to_lowercase()),
        ("a_c", crate::io::fmt_f64(ctx.params.scales().critical_length)),
    ];
    files.push(ctx.csv("trajectory.csv", &extra, &["t", "r_p", "norm", "energy"], &rows)?);
    let ev = cfg.evolve.build()?;
    if !rep.trajectory.snapshots.is_empty() {
        let blocks: Vec<Block> = rep.trajectory.snapshots.iter().map(|s| state_block(ctx, s, ev.dt)).collect();
        let path = ctx.path("snapshots.bin");
        write_blocks(&path, &blocks)?;
        files.push(path);
    }
    let final_path = ctx.path("final_state.bin");
    write_blocks(&final_path, &[state_block(ctx, &rep.trajectory.final_state, ev.dt)])?;
    files.push(final_path);
    if let Some(n) = &rep.noise {
        let block = Block {
            kind: BlockKind::Noise,
            run_hash: ctx.hash_bytes(),
            grid_n: ev.grid.n as u64,
            grid_h: ev.grid.h,
            dt: n.dt,
            seed: n.seed,
            stream: n.trajectory,
            t: 0.0,
            rows: n.n_steps as u64,
            cols: n.n_points() as u64,
            aux: n.radii.clone(),
            data: n.values.clone(),
        };
        let path = ctx.path("noise.bin");
        write_blocks(&path, &[block])?;
        files.push(path);
    }
    let s = ctx.params.scales();
    let osc = &rep.oscillation;
    let summary = json!({
        "mode": ev.mode.as_str(),
        "steps": ev.n_steps,
        "dt": ev.dt,
        "max_norm_drift": rep.trajectory.max_norm_drift,
        "initial_slope": finite_or_null(rep.trend.0),
        "initial_curvature": finite_or_null(rep.trend.1),
        "mass_over_threshold": ctx.params.mass / s.threshold_mass,
        "a_c": s.critical_length,
        "free_peak_deviation": rep.free_peak_deviation,
        "oscillation": {
            "maxima": osc.maxima.len(),
            "minima": osc.minima.len(),
            "full_cycle": osc.full_cycle,
            "center": osc.center,
            "center_within_2_of_a_c": osc.center_within(s.critical_length, 2.0),
        },
    });
    println!(
        "{} steps, max norm drift {:.3e}, initial slope {:.4e}, curvature {:.4e}, full cycle {}",
        ev.n_steps, rep.trajectory.max_norm_drift, rep.trend.0, rep.trend.1, osc.full_cycle
    );
    files.push(ctx.json("summary.json", summary)?);
    Ok(files)
}

// ---------------------------------------------------------------- ensemble

#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub result: EnsembleResult,
    pub decay: CoherenceDecay,
    pub estimate: DecoherenceEstimate,
    /// exp(−Δφ²/2) from the quadrature at each recorded time, with its error.
    pub model: Option<(Vec<f64>, Vec<f64>)>,
    pub equivalence: Option<EquivalenceReport>,
}

pub fn ensemble_config(cfg: &Config, params: &SimParams) -> Result<EnsembleConfig, LabError> {
    let en = &cfg.ensemble;
    let mut ev = cfg.evolve.build()?;
    ev.mode = en.mode.into();
    ev.dt = en.dt;
    ev.n_steps = en.n_steps();
    ev.record_every = en.record_every;
    ev.snapshot_every = 0;
    let mut c = EnsembleConfig::new(ev, en.engine(), en.trajectories, cfg.seed, en.probes.clone());
    c.noise = cfg.noise.build()?;
    c.max_failure_fraction = en.max_failure_fraction;
    // Probes are needed to size the phase-ansatz support; the split-step
    // engine uses grid points.
    if en.engine == EngineChoice::PhaseAnsatz && matches!(c.noise.support, NoiseSupport::GridInterior) {
        return Err(LabError::Config("noise.support = grid needs ensemble.engine = split_step".into()));
    }
    params.validate()?;
    Ok(c)
}

/// exp(−Δφ²/2) and its propagated quadrature error at each time.
pub fn phasevar_model(p: &SimParams, r1: f64, r2: f64, times: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LabError> {
    let mut model = Vec::with_capacity(times.len());
    let mut err = Vec::with_capacity(times.len());
    for &t in times {
        let r = phase_variance_quadrature(p, r1, r2, t)?;
        let d = (-0.5 * r.dphi2).exp();
        model.push(d);
        err.push(0.5 * d * r.abs_err);
    }
    Ok((model, err))
}

pub fn analyze_ensemble(cfg: &Config, p: &SimParams, result: EnsembleResult) -> Result<EnsembleReport, LabError> {
    let [i, j] = cfg.ensemble.pair;
    let decay = result.coherence_decay(i, j)?;
    let kappa = predicted_rate(p, decay.r1, decay.r2);
    let estimate = extract_decoherence_time(&decay, p.criterion_constant, kappa)?;
    let (model, eq) = if cfg.ensemble.compare_phasevar {
        let (m, e) = phasevar_model(p, decay.r1, decay.r2, &decay.times)?;
        let eq = equivalence(&decay, &m, &e, 3.0)?;
        (Some((m, e)), Some(eq))
    } else {
        (None, None)
    };
    Ok(EnsembleReport { result, decay, estimate, model, equivalence: eq })
}

pub fn compute_ensemble(cfg: &Config) -> Result<EnsembleReport, LabError> {
    let p = cfg.params();
    let ec = ensemble_config(cfg, &p)?;
    let result = run_ensemble(&p, &ec)?;
    analyze_ensemble(cfg, &p, result)
}

fn estimate_json(est: &DecoherenceEstimate) -> serde_json::Value {
    let t = est.crossing.time();
    json!({
        "threshold": est.threshold,
        "T_threshold": t,
        "threshold_crossed": matches!(est.crossing, Crossing::At(_)),
        "T_fit": finite_or_null(est.fit_time),
        "kappa": est.kappa,
        "fit_residual": est.fit_residual,
        "fit_points": est.fit_points,
        "predicted_kappa": est.predicted_kappa,
        "predicted_T": est.predicted_time,
        "ratio": t / est.predicted_time,
        "ratio_fit": finite_or_null(est.fit_time / est.predicted_time),
        "revivals": est.revivals,
    })
}

pub fn write_ensemble(ctx: &RunContext, cfg: &Config, rep: &EnsembleReport) -> Result<Vec<PathBuf>, LabError> {
    let mut files = Vec::new();
    let d = &rep.decay;
    let mut columns = vec!["t", "D", "stderr"];
    if rep.model.is_some() {
        columns.extend(["model", "model_err"]);
    }
    let rows: Vec<Vec<Cell>> = (0..d.times.len())
        .map(|k| {
            let mut row: Vec<Cell> = vec![d.times[k].into(), d.d[k].into(), d.stderr[k].into()];
            if let Some((m, e)) = &rep.model {
                row.extend([m[k].into(), e[k].into()]);
            }
            row
        })
        .collect();
    let f = crate::io::fmt_f64;
    let extra = [
        ("r1", f(d.r1)),
        ("r2", f(d.r2)),
        ("trajectories", d.n.to_string()),
        ("predicted_T", f(rep.estimate.predicted_time)),
    ];
    files.push(ctx.csv("decay.csv", &extra, &columns, &rows)?);

    let res = &rep.result;
    let np = res.probe_radii.len();
    let ev_dt = cfg.ensemble.dt;
    let blocks: Vec<Block> = (0..res.times.len())
        .map(|k| {
            let m = res.density_matrix(k);
            Block {
                kind: BlockKind::Density,
                run_hash: ctx.hash_bytes(),
                grid_n: np as u64,
                grid_h: 0.0,
                dt: ev_dt,
                seed: ctx.seed,
                stream: m.n,
                t: m.t,
                rows: np as u64,
                cols: 2 * np as u64,
                aux: m.radii.clone(),
                data: m.values.iter().flat_map(|z| [z.re, z.im]).collect(),
            }
        })
        .collect();
    let path = ctx.path("rho.bin");
    write_blocks(&path, &blocks)?;
    files.push(path);
    if np <= cfg.ensemble.rho_csv_max_probes {
        let mut rows = Vec::new();
        for k in 0..res.times.len() {
            let m = res.density_matrix(k);
            for i in 0..np {
                for j in 0..np {
                    let z = m.get(i, j);
                    rows.push(vec![
                        m.t.into(),
                        i.into(),
                        j.into(),
                        m.radii[i].into(),
                        m.radii[j].into(),
                        z.re.into(),
                        z.im.into(),
                        m.stderr[i * np + j].into(),
                    ]);
                }
            }
        }
        files.push(ctx.csv("rho.csv", &[], &["t", "i", "j", "r_i", "r_j", "re", "im", "stderr"], &rows)?);
    }

    let mut summary = estimate_json(&rep.estimate);
    summary["trajectories"] = json!(d.n);
    summary["failed"] = json!(res.failed);
    summary["max_norm_rate"] = json!(res.max_norm_rate);
    summary["r1"] = json!(d.r1);
    summary["r2"] = json!(d.r2);
    summary["engine"] = json!(format!("{:?}", cfg.ensemble.engine).to_lowercase());
    if let Some(eq) = &rep.equivalence {
        summary["equivalence"] = json!({
            "n_sigma": 3.0,
            "max_z": finite_or_null(eq.max_z),
            "worst_time": eq.worst_time,
            "n_outside": eq.n_outside,
            "n_points": eq.n_points,
        });
    }
    println!(
        "N = {}, failed = {}, T_threshold = {:.5e}{}, T_fit = {:.5e}, predicted = {:.5e}, max norm rate {:.2e}",
        d.n,
        res.failed,
        rep.estimate.crossing.time(),
        if matches!(rep.estimate.crossing, Crossing::At(_)) { "" } else { " (lower bound)" },
        rep.estimate.fit_time,
        rep.estimate.predicted_time,
        res.max_norm_rate
    );
    files.push(ctx.json("summary.json", summary)?);
    Ok(files)
}

// ---------------------------------------------------------------- master

#[derive(Debug, Clone)]
pub struct MasterReport {
    pub grid: RadialGrid,
    pub result: MasterResult,
    /// Split-step ensemble on the same toy grid, when requested.
    pub ensemble: Option<CoherenceDecay>,
}

pub fn master_grid(cfg: &Config) -> Result<RadialGrid, LabError> {
    Ok(RadialGrid::new(cfg.master.grid_points, cfg.master.r_max)?)
}

pub fn compute_master(cfg: &Config) -> Result<MasterReport, LabError> {
    let p = cfg.params();
    let m = &cfg.master;
    let grid = master_grid(cfg)?;
    let kgrid = KGrid::new(&grid, m.spacing())?;
    let temporal = cfg.noise.temporal_mode()?;
    let kernel = build_dkernel(&p, &p.packet(0.0), &grid, kgrid, m.geometry(), temporal)?;
    let mut mc = MasterConfig::new(&p, m.dt, m.n_steps());
    mc.gamma = gamma_of(&p) * m.gamma_scale;
    mc.record_every = m.record_every;
    mc.structure = m.structure();
    mc.mean_field = m.mean_field;
    mc.trace_tol = m.trace_tol;
    let result = evolve_master(&p, &grid, &initial_gaussian(&p, &grid), &kernel, &mc)?;
    let ensemble = if m.compare_ensemble { Some(master_ensemble(cfg, &p, &grid)?) } else { None };
    Ok(MasterReport { grid, result, ensemble })
}

/// The linearized split-step ensemble the master equation should average:
/// same toy grid, noise on the grid interior with the kernel frozen at t = 0
/// and scaled by √gamma_scale.
pub fn master_ensemble(cfg: &Config, p: &SimParams, grid: &RadialGrid) -> Result<CoherenceDecay, LabError> {
    let m = &cfg.master;
    let mut ev = stochsn_core::evolve::EvolveConfig::new(
        stochsn_core::evolve::Mode::StochasticLinearized,
        *grid,
        m.dt,
        m.n_steps(),
    );
    ev.record_every = m.record_every;
    let probes = vec![grid.r(m.pair[0] + 1), grid.r(m.pair[1] + 1)];
    let mut ec =
        EnsembleConfig::new(ev, stochsn_core::ensemble::Engine::SplitStep, cfg.ensemble.trajectories, cfg.seed, probes);
    ec.noise.geometry = m.geometry();
    ec.noise.temporal = cfg.noise.temporal_mode()?;
    ec.noise.support = NoiseSupport::GridInterior;
    ec.noise.schedule.alpha_tol = f64::MAX;
    ec.noise.scale = m.gamma_scale.sqrt();
    ec.max_failure_fraction = cfg.ensemble.max_failure_fraction;
    let res = run_ensemble(p, &ec)?;
    Ok(res.coherence_decay(0, 1)?)
}

pub fn write_master(ctx: &RunContext, cfg: &Config, rep: &MasterReport) -> Result<Vec<PathBuf>, LabError> {
    let mut files = Vec::new();
    let res = &rep.result;
    let n = rep.grid.n - 2;
    let mut rows = Vec::with_capacity(res.times.len() * n * n);
    for (k, rho) in res.rho.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                let z = rho[(i, j)];
                rows.push(vec![res.times[k].into(), i.into(), j.into(), z.re.into(), z.im.into()]);
            }
        }
    }
    let f = crate::io::fmt_f64;
    let extra = [
        ("grid_points", rep.grid.n.to_string()),
        ("grid_h", f(rep.grid.h)),
        ("structure", cfg.master.structure().as_str().to_string()),
    ];
    files.push(ctx.csv("rho.csv", &extra, &["t", "i", "j", "re", "im"], &rows)?);
    let [pi, pj] = cfg.master.pair;
    let coh = res.coherence(pi, pj);
    let diag: Vec<Vec<Cell>> = (0..res.times.len())
        .map(|k| vec![res.times[k].into(), res.trace[k].into(), res.min_eig[k].into(), coh[k].into()])
        .collect();
    files.push(ctx.csv("master_diag.csv", &extra, &["t", "trace", "min_eig", "D"], &diag)?);
    let mut summary = json!({
        "structure": cfg.master.structure().as_str(),
        "gamma": gamma_of(&ctx.params) * cfg.master.gamma_scale,
        "max_raw_asymmetry": res.max_raw_asymmetry,
        "max_trace_drift": res.max_trace_drift,
        "min_eig": res.min_eig.iter().copied().fold(f64::INFINITY, f64::min),
        "pair": [pi, pj],
        "D_final": coh.last().copied(),
    });
    if let Some(e) = &rep.ensemble {
        let rows: Vec<Vec<Cell>> = (0..e.times.len())
            .map(|k| vec![e.times[k].into(), coh[k].into(), e.d[k].into(), e.stderr[k].into()])
            .collect();
        files.push(ctx.csv("compare.csv", &extra, &["t", "D_master", "D_ensemble", "stderr"], &rows)?);
        let last = e.times.len() - 1;
        let (dm, de) = (1.0 - coh[last], 1.0 - e.d[last]);
        summary["ensemble"] = json!({
            "trajectories": e.n,
            "decay_master": dm,
            "decay_ensemble": de,
            "decay_stderr": e.stderr[last],
            "relative_difference": (dm - de).abs() / de.abs(),
        });
    }
    println!(
        "{} records, trace drift {:.3e}, raw asymmetry {:.3e}, final D({},{}) = {:.6}",
        res.times.len(),
        res.max_trace_drift,
        res.max_raw_asymmetry,
        pi,
        pj,
        coh.last().copied().unwrap_or(f64::NAN)
    );
    files.push(ctx.json("summary.json", summary)?);
    Ok(files)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub params: SimParams,
    pub report: EnsembleReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Log-log slope of the threshold time against the swept value.
    pub exponent: f64,
    pub exponent_fit: f64,
}

/// Ensembles across `sweep.values` of `sweep.key`, each run for
/// `t_final_factor` predicted decoherence times.
pub fn compute_sweep(cfg: &Config) -> Result<SweepReport, LabError> {
    let s = &cfg.sweep;
    let mut points = Vec::new();
    for &v in &s.values {
        let mut c = cfg.clone();
        match s.key.as_str() {
            "mass" => c.mass = v,
            _ => c.width = v,
        }
        let p = c.params();
        let [i, j] = c.ensemble.pair;
        let t_pred = decoherence_time(&p, c.ensemble.probes[i], c.ensemble.probes[j])?.time;
        c.ensemble.dt = t_pred / s.steps_per_time as f64;
        c.ensemble.t_final = s.t_final_factor * t_pred;
        c.ensemble.compare_phasevar = false;
        let result = run_ensemble(&p, &ensemble_config(&c, &p)?)?;
        points.push(SweepPoint { value: v, params: p, report: analyze_ensemble(&c, &p, result)? });
    }
    let lx: Vec<f64> = points.iter().map(|q| q.value.ln()).collect();
    let lt: Vec<f64> = points.iter().map(|q| q.report.estimate.crossing.time().ln()).collect();
    let lf: Vec<f64> = points.iter().map(|q| q.report.estimate.fit_time.ln()).collect();
    let exponent = if points.len() >= 2 { linear_fit(&lx, &lt).0 } else { f64::NAN };
    let exponent_fit = if points.len() >= 2 { linear_fit(&lx, &lf).0 } else { f64::NAN };
    Ok(SweepReport { points, exponent, exponent_fit })
}

pub fn write_sweep(ctx: &RunContext, cfg: &Config, rep: &SweepReport) -> Result<Vec<PathBuf>, LabError> {
    let rows: Vec<Vec<Cell>> = rep
        .points
        .iter()
        .map(|q| {
            let e = &q.report.estimate;
            vec![
                q.value.into(),
                q.params.mass.into(),
                q.params.width.into(),
                q.report.decay.r1.into(),
                q.report.decay.r2.into(),
                e.crossing.time().into(),
                matches!(e.crossing, Crossing::At(_)).into(),
                e.fit_time.into(),
                e.predicted_time.into(),
                (e.crossing.time() / e.predicted_time).into(),
                q.report.result.max_norm_rate.into(),
            ]
        })
        .collect();
    let columns =
        ["value", "m", "a", "r1", "r2", "T_threshold", "crossed", "T_fit", "predicted_T", "ratio", "max_norm_rate"];
    let extra = [("key", cfg.sweep.key.clone())];
    let csv = ctx.csv("sweep.csv", &extra, &columns, &rows)?;
    for q in &rep.points {
        println!(
            "{} = {:.4}: T_threshold = {:.5e}, predicted = {:.5e}",
            cfg.sweep.key,
            q.value,
            q.report.estimate.crossing.time(),
            q.report.estimate.predicted_time
        );
    }
    println!("log-log exponent {:.4} (threshold), {:.4} (fit)", rep.exponent, rep.exponent_fit);
    let summary = json!({
        "key": cfg.sweep.key,
        "exponent": finite_or_null(rep.exponent),
        "exponent_fit": finite_or_null(rep.exponent_fit),
        "values": cfg.sweep.values,
    });
    Ok(vec![csv, ctx.json("summary.json", summary)?])
}

// ---------------------------------------------------------------- driver

fn dispatch(ctx: &RunContext, cfg: &Config) -> Result<Vec<PathBuf>, LabError> {
    match ctx.command {
        Command::Scales => write_scales(ctx, cfg, &compute_scales(cfg)?),
        Command::Phasevar => write_phasevar(ctx, cfg, &compute_phasevar(cfg)?),
        Command::Evolve => write_evolve(ctx, cfg, &compute_evolve(cfg)?),
        Command::Ensemble => write_ensemble(ctx, cfg, &compute_ensemble(cfg)?),
        Command::Master => write_master(ctx, cfg, &compute_master(cfg)?),
        Command::Sweep => write_sweep(ctx, cfg, &compute_sweep(cfg)?),
    }
}

/// Run one subcommand into `out_dir` and write `config.toml` and
/// `manifest.json` next to its outputs. Re-running with that `config.toml`
/// reproduces every output byte for byte.
pub fn execute(
    command: Command,
    cfg: &Config,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<RunManifest, LabError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ctx = RunContext::new(command, cfg, out_dir);
    let start = Instant::now();
    let files = with_threads(threads, || dispatch(&ctx, cfg))?;
    let wall = start.elapsed().as_secs_f64();
    let snapshot = out_dir.join("config.toml");
    std::fs::write(&snapshot, cfg.to_toml())?;
    let outputs = files
        .iter()
        .map(|f| {
            Ok(OutputFile {
                path: f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: file_sha256(f)?,
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let manifest = RunManifest {
        command: command.as_str().to_string(),
        input_hash: ctx.hash.clone(),
        config: cfg.to_toml(),
        seeds: vec![cfg.seed],
        versions: versions(),
        threads: threads.unwrap_or_else(rayon::current_num_threads),
        wall_clock_s: wall,
        outputs,
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
