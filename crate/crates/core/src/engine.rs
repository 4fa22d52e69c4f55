//! Quasi-static time-series loop plus the sweep and mode-comparison drivers.
//!
//! Per step: sample storage efficiencies, read and perturb profiles, evaluate
//! device outputs, dispatch storage, set reactive powers, solve the power
//! flow, advance storage and record metrics.

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::control::{apply_mode, ControlError, ControlMode, DerRatings};
use crate::der::{bes_step, mpv_output, sample_efficiencies, split_power, BesState, DerError};
use crate::grid_model::BusId;
use crate::metrics::{MetricAggregate, MetricOptions, MetricsSnapshot};
use crate::power_flow::{
    total_loss, BranchFlowSolution, BusInjection, NodalInjection, PowerFlowError, PowerFlowModel,
};
use crate::scenario::{apply_noise, stream_rng, streams, NoiseClass, Scenario, SeedPolicy, SensitivityParams};
use crate::strategies::{dispatch, DispatchInput, DispatchResult};

pub use crate::profiles::ProfileSet;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("step {step}: {source}")]
    Solver {
        step: usize,
        #[source]
        source: PowerFlowError,
    },
    #[error("step {step}: {source}")]
    Storage {
        step: usize,
        #[source]
        source: DerError,
    },
    #[error("step {step}: {source}")]
    Control {
        step: usize,
        #[source]
        source: ControlError,
    },
    #[error("sweep axes must all be non-empty")]
    EmptyAxes,
    #[error("mode comparison needs at least two modes, got {0}")]
    TooFewModes(usize),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl EngineError {
    pub fn step(&self) -> Option<usize> {
        match self {
            EngineError::Solver { step, .. }
            | EngineError::Storage { step, .. }
            | EngineError::Control { step, .. } => Some(*step),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesLog {
    pub bus: BusId,
    pub p_cha: f64,
    pub p_dis: f64,
    pub soc: f64,
    pub energy: f64,
    pub eta_cha: f64,
    pub eta_dis: f64,
    pub eta_self: f64,
    pub self_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionSummary {
    pub iterations: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub slack_p_kw: f64,
    pub slack_q_kvar: f64,
    pub loss_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    #[serde(skip)]
    pub timestamp: NaiveDateTime,
    pub minute_of_day: u32,
    pub injection: NodalInjection,
    pub solution: SolutionSummary,
    pub dispatch: DispatchResult,
    /// Reactive power set by the control mode per bus, kvar.
    pub q_der: Vec<f64>,
    pub metrics: MetricsSnapshot,
    pub bes: Vec<BesLog>,
    /// `slack + generation - load - losses`, pu.
    pub balance_residual: f64,
    /// Buses outside `v_ref +- epsilon_v`.
    pub band_violations: usize,
}

impl StepRecord {
    pub fn q_total(&self) -> f64 {
        self.q_der.iter().sum()
    }

    pub fn bes_total(&self) -> f64 {
        self.bes.iter().map(|b| b.p_cha + b.p_dis).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyTotals {
    pub load_kwh: f64,
    pub pv_kwh: f64,
    pub mpv_kwh: f64,
    pub import_kwh: f64,
    pub export_kwh: f64,
    pub bes_charge_kwh: f64,
    pub bes_discharge_kwh: f64,
    pub loss_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub strategy: String,
    pub mode: String,
    pub variant: String,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub n_mpv: usize,
    pub alpha: Option<f64>,
    pub alpha_feeder: Option<f64>,
    pub steps: usize,
    pub warmup_steps: usize,
    /// Aggregates over the steps after the warm-up.
    pub metrics: MetricAggregate,
    /// Extreme bus voltages over all steps.
    pub v_max: f64,
    pub v_min: f64,
    pub band_violation_steps: usize,
    pub soc_violations: usize,
    pub max_balance_residual: f64,
    pub energy: EnergyTotals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

struct Accumulator {
    snapshots: Vec<MetricsSnapshot>,
    v_max: f64,
    v_min: f64,
    band_steps: usize,
    soc_violations: usize,
    max_residual: f64,
    energy: EnergyTotals,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            snapshots: Vec::new(),
            v_max: f64::NEG_INFINITY,
            v_min: f64::INFINITY,
            band_steps: 0,
            soc_violations: 0,
            max_residual: 0.0,
            energy: EnergyTotals::default(),
        }
    }

    fn add(&mut self, r: &StepRecord, scenario: &Scenario, dt: f64) {
        self.v_max = self.v_max.max(r.solution.v_max);
        self.v_min = self.v_min.min(r.solution.v_min);
        self.band_steps += usize::from(r.band_violations > 0);
        self.max_residual = self.max_residual.max(r.balance_residual.abs());
        for (log, unit) in r.bes.iter().zip(&scenario.bes) {
            if log.soc < unit.soc_min - 1e-9 || log.soc > unit.soc_max + 1e-9 {
                self.soc_violations += 1;
            }
            self.energy.bes_charge_kwh += -log.p_cha * dt;
            self.energy.bes_discharge_kwh += log.p_dis * dt;
        }
        let e = &mut self.energy;
        for b in &r.injection.buses {
            e.load_kwh += b.p_load * dt;
            e.pv_kwh += b.p_pv * dt;
            e.mpv_kwh += b.p_mpv * dt;
        }
        e.import_kwh += r.solution.slack_p_kw.max(0.0) * dt;
        e.export_kwh += (-r.solution.slack_p_kw).max(0.0) * dt;
        e.loss_kwh += r.solution.loss_kw * dt;
        if r.t >= scenario.config.run.warmup_steps {
            self.snapshots.push(r.metrics.clone());
        }
    }

    fn finish(self, scenario: &Scenario, steps: usize) -> RunSummary {
        let cfg = &scenario.config;
        RunSummary {
            seed: scenario.seed,
            strategy: cfg.strategy.kind.name().to_string(),
            mode: cfg.control.mode.name().to_string(),
            variant: cfg.run.variant.name().to_string(),
            beta: cfg.sensitivity.beta,
            gamma1: cfg.sensitivity.gamma1,
            gamma2: cfg.sensitivity.gamma2,
            n_mpv: scenario.mpv.len(),
            alpha: scenario.alpha().ok(),
            alpha_feeder: scenario.alpha_feeder(),
            steps,
            warmup_steps: cfg.run.warmup_steps.min(steps),
            metrics: MetricAggregate::from_snapshots(&self.snapshots, cfg.run.dt),
            v_max: self.v_max,
            v_min: self.v_min,
            band_violation_steps: self.band_steps,
            soc_violations: self.soc_violations,
            max_balance_residual: self.max_residual,
            energy: self.energy,
        }
    }
}

/// Runs the scenario and keeps every step record.
pub fn run(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    let mut records = Vec::with_capacity(scenario.horizon);
    let summary = simulate(scenario, |r| records.push(r))?;
    Ok(RunOutput { records, summary })
}

/// Runs the scenario keeping only the summary.
pub fn run_summary(scenario: &Scenario) -> Result<RunSummary, EngineError> {
    simulate(scenario, |_| {})
}

fn simulate(scenario: &Scenario, mut sink: impl FnMut(StepRecord)) -> Result<RunSummary, EngineError> {
    let cfg = &scenario.config;
    let topo = &scenario.topology;
    let profiles = &scenario.profiles;
    let n = topo.n_buses();
    let dt = cfg.run.dt;
    let model = PowerFlowModel::new(topo).map_err(|source| EngineError::Solver { step: 0, source })?;
    let metric_opts = MetricOptions {
        include_slack_in_vm: cfg.run.include_slack_in_vm,
    };
    let limits = cfg.grid.limits;
    let bes_reactive = cfg.strategy.bes_reactive();
    let mode = cfg.control.mode;
    let qv_iters = if matches!(mode, ControlMode::QofV { .. }) {
        cfg.run.qv_inner_iterations.max(1)
    } else {
        1
    };

    let col = |name: &str| profiles.column(name).expect("validated profile column");
    let load_cols: Vec<&[f64]> = scenario.loads.iter().map(|l| col(&l.profile)).collect();
    let pv_cols: Vec<&[f64]> = scenario.pv.iter().map(|p| col(&p.profile)).collect();
    let mpv_cols: Vec<&[f64]> = scenario.mpv.iter().map(|m| col(&m.profile)).collect();

    let seed = scenario.seed;
    let noise_seed = scenario.noise_seed();
    let noise = &cfg.noise;
    let mut eff_rng: Vec<_> = (0..scenario.bes.len())
        .map(|i| stream_rng(seed, streams::EFFICIENCY + i as u64))
        .collect();
    let mut load_rng: Vec<_> = (0..scenario.loads.len())
        .map(|i| stream_rng(noise_seed, streams::NOISE_LOAD + i as u64))
        .collect();
    let mut pv_rng: Vec<_> = (0..scenario.pv.len())
        .map(|i| stream_rng(noise_seed, streams::NOISE_PV + i as u64))
        .collect();
    let mut mpv_rng: Vec<_> = scenario
        .mpv
        .iter()
        .map(|m| stream_rng(noise_seed, streams::NOISE_MPV + m.bus as u64))
        .collect();

    let mut s_pv = vec![0.0; n];
    for p in &scenario.pv {
        s_pv[p.bus] += p.s_rated;
    }
    let mut s_bes = vec![0.0; n];
    if bes_reactive {
        for b in &scenario.bes {
            s_bes[b.bus] += b.s_rated;
        }
    }

    let mut states: Vec<BesState> = scenario.bes.iter().map(BesState::initial).collect();
    let mut v_prev = vec![1.0; n];
    let mut acc = Accumulator::new();

    for t in 0..scenario.horizon {
        let row = cfg.run.start + t;
        for (i, unit) in scenario.bes.iter().enumerate() {
            let eff = sample_efficiencies(unit, &mut eff_rng[i]);
            states[i].set_efficiencies(eff);
        }

        let mut inj = NodalInjection::zeros(n);
        for (i, l) in scenario.loads.iter().enumerate() {
            let p = apply_noise(l.active(load_cols[i][row]), NoiseClass::Load, noise, &mut load_rng[i]);
            inj.buses[l.bus].p_load += p;
            inj.buses[l.bus].q_load += l.reactive(p);
        }
        for (i, p) in scenario.pv.iter().enumerate() {
            let frac = apply_noise(pv_cols[i][row], NoiseClass::Pv, noise, &mut pv_rng[i]);
            inj.buses[p.bus].p_pv += p.output(frac);
        }
        for (i, m) in scenario.mpv.iter().enumerate() {
            let frac = apply_noise(mpv_cols[i][row], NoiseClass::Mpv, noise, &mut mpv_rng[i]);
            inj.buses[m.bus].p_mpv += mpv_output(m, frac);
        }

        let pv_bus: Vec<f64> = inj.buses.iter().map(|b| b.p_pv).collect();
        let load_bus: Vec<f64> = inj.buses.iter().map(|b| b.p_load).collect();
        let minute = profiles.minute_of_day(row);
        let dispatched = dispatch(
            cfg.strategy.kind,
            &DispatchInput {
                pv: &pv_bus,
                load: &load_bus,
                bes_units: &scenario.bes,
                bes_states: &states,
                zones: &scenario.zones,
                windows: &cfg.strategy.windows,
                minute_of_day: minute,
                dt,
            },
        );
        let mut p_bes_bus = vec![0.0; n];
        for (u, p) in scenario.bes.iter().zip(&dispatched.bes_power) {
            p_bes_bus[u.bus] += p;
            inj.buses[u.bus].p_bes += p;
        }

        let mut q_der = vec![0.0; n];
        let mut solution: Option<BranchFlowSolution> = None;
        let mut v_ctrl = v_prev.clone();
        for _ in 0..qv_iters {
            for b in 0..n {
                let ratings = DerRatings {
                    s_pv: s_pv[b],
                    p_pv: inj.buses[b].p_pv,
                    s_bes: s_bes[b],
                    p_bes: if s_bes[b] > 0.0 { p_bes_bus[b] } else { 0.0 },
                };
                if ratings.s_pv <= 0.0 && ratings.s_bes <= 0.0 {
                    continue;
                }
                let q = apply_mode(&mode, v_ctrl[b], &ratings)
                    .map_err(|source| EngineError::Control { step: t, source })?;
                let cap_pv = (ratings.s_pv.powi(2) - ratings.p_pv.powi(2)).max(0.0).sqrt();
                let cap_bes = (ratings.s_bes.powi(2) - ratings.p_bes.powi(2)).max(0.0).sqrt();
                let share = if cap_pv + cap_bes > 0.0 {
                    cap_pv / (cap_pv + cap_bes)
                } else {
                    1.0
                };
                q_der[b] = q;
                inj.buses[b].q_pv = q * share;
                inj.buses[b].q_bes = q * (1.0 - share);
            }
            let sol = model
                .solve(&inj, cfg.grid.slack_voltage)
                .map_err(|source| EngineError::Solver { step: t, source })?;
            let change = sol
                .v
                .iter()
                .zip(&v_ctrl)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v_ctrl.clone_from(&sol.v);
            solution = Some(sol);
            if change < cfg.run.qv_tolerance {
                break;
            }
        }
        let sol = solution.expect("at least one solve per step");

        let mut bes_logs = Vec::with_capacity(scenario.bes.len());
        for (i, unit) in scenario.bes.iter().enumerate() {
            let (p_cha, p_dis) = split_power(dispatched.bes_power[i]);
            let out = bes_step(unit, &states[i], p_cha, p_dis, dt)
                .map_err(|source| EngineError::Storage { step: t, source })?;
            bes_logs.push(BesLog {
                bus: unit.bus,
                p_cha: out.p_cha,
                p_dis: out.p_dis,
                soc: out.state.soc,
                energy: out.state.energy,
                eta_cha: states[i].eta_cha,
                eta_dis: states[i].eta_dis,
                eta_self: states[i].eta_self,
                self_loss: out.self_loss,
            });
            states[i] = out.state;
        }

        let bases = topo.bases;
        let loss = total_loss(&sol, topo);
        let (p_net, _) = inj.net_pu(&bases);
        let balance_residual = sol.slack_p + p_net.iter().sum::<f64>() - loss;
        let band_violations = sol.v.iter().skip(1).filter(|&&v| !limits.within(v)).count();
        let metrics = MetricsSnapshot::compute(&sol, topo, &metric_opts);
        let record = StepRecord {
            t,
            timestamp: profiles.timestamps()[row],
            minute_of_day: minute,
            solution: SolutionSummary {
                iterations: sol.iterations,
                v_min: sol.v_min(),
                v_max: sol.v_max(),
                slack_p_kw: bases.pu_to_kw(sol.slack_p),
                slack_q_kvar: bases.pu_to_kw(sol.slack_q),
                loss_kw: bases.pu_to_kw(loss),
            },
            injection: inj,
            dispatch: dispatched,
            q_der,
            metrics,
            bes: bes_logs,
            balance_residual,
            band_violations,
        };
        v_prev = sol.v;
        acc.add(&record, scenario, dt);
        sink(record);
    }
    Ok(acc.finish(scenario, scenario.horizon))
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAxes {
    pub beta: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl SweepAxes {
    /// beta 0..1 in steps of 0.1, gamma1 {600, 800, 1000} W,
    /// gamma2 {800, 1200, 1600, 2000} W.
    pub fn standard() -> Self {
        Self {
            beta: (0..=10).map(|i| i as f64 / 10.0).collect(),
            gamma1: vec![600.0, 800.0, 1000.0],
            gamma2: vec![800.0, 1200.0, 1600.0, 2000.0],
        }
    }

    pub fn single(p: SensitivityParams) -> Self {
        Self {
            beta: vec![p.beta],
            gamma1: vec![p.gamma1],
            gamma2: vec![p.gamma2],
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len() * self.gamma1.len() * self.gamma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points ordered by gamma2 (panel), then gamma1 (series), then beta.
    pub fn points(&self) -> Vec<SensitivityParams> {
        let mut out = Vec::with_capacity(self.len());
        for &gamma2 in &self.gamma2 {
            for &gamma1 in &self.gamma1 {
                for &beta in &self.beta {
                    out.push(SensitivityParams { beta, gamma1, gamma2 });
                }
            }
        }
        out
    }
}

/// `start:end:step`, inclusive of `end` up to rounding.
pub fn parse_range(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number {x:?} in {s:?}"));
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [a, b, c] => {
            let (start, end, step) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || end < start {
                return Err(format!("range {s:?} needs step > 0 and end >= start"));
            }
            let count = ((end - start) / step + 1e-9).floor() as usize;
            Ok((0..=count)
                .map(|i| {
                    let v = start + i as f64 * step;
                    (v * 1e9).round() / 1e9
                })
                .collect())
        }
        _ => Err(format!("expected start:end:step, got {s:?}")),
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number {x:?}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub params: SensitivityParams,
    pub seed: u64,
    pub summary: Result<RunSummary, String>,
}

/// (master, index) -> seed via splitmix64.
pub fn point_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))
}

/// One run per grid point; failures are recorded per point.
pub fn sweep(base: &Scenario, axes: &SweepAxes, jobs: Option<usize>) -> Result<Vec<SweepPoint>, EngineError> {
    if axes.beta.is_empty() || axes.gamma1.is_empty() || axes.gamma2.is_empty() {
        return Err(EngineError::EmptyAxes);
    }
    let points = axes.points();
    let policy = base.config.run.seed_policy;
    let master = base.seed;
    let work = || {
        points
            .par_iter()
            .enumerate()
            .map(|(index, &params)| {
                let seed = match policy {
                    SeedPolicy::Common => master,
                    SeedPolicy::Hashed => point_seed(master, index),
                };
                let mut s = base.with_seed(seed);
                s = s.with_sensitivity(params);
                SweepPoint {
                    index,
                    params,
                    seed,
                    summary: run_summary(&s).map_err(|e| e.to_string()),
                }
            })
            .collect::<Vec<_>>()
    };
    Ok(pool(jobs)?.install(work))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRun {
    pub mode: ControlMode,
    pub output: RunOutput,
}

/// Same scenario and seed under each mode; output order follows `modes`.
pub fn compare_modes(
    scenario: &Scenario,
    modes: &[ControlMode],
    jobs: Option<usize>,
) -> Result<Vec<ModeRun>, EngineError> {
    if modes.len() < 2 {
        return Err(EngineError::TooFewModes(modes.len()));
    }
    let work = || {
        modes
            .par_iter()
            .map(|&mode| run(&scenario.with_mode(mode)).map(|output| ModeRun { mode, output }))
            .collect::<Result<Vec<_>, _>>()
    };
    pool(jobs)?.install(work)
}

/// Injection of one bus in kW, used by the snapshot tools.
pub fn injection_row(b: &BusInjection) -> [f64; 7] {
    [b.p_load, b.q_load, b.p_pv, b.q_pv, b.p_mpv, b.p_bes, b.q_bes]
}
