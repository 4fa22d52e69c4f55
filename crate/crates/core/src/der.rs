//! Device models: household loads, rooftop PV, mini-PV (balcony) units and
//! battery energy storage with stochastic efficiencies.
//!
//! All powers are kW, energies kWh, durations hours. BES powers follow the
//! generator convention: charging is negative, discharging positive.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_model::BusId;

/// Slack allowed when checking power limits against floating-point results.
const POWER_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DerError {
    #[error("BES at bus {bus}: charge {p_cha} kW and discharge {p_dis} kW requested together")]
    MutualExclusionViolation { bus: BusId, p_cha: f64, p_dis: f64 },
    #[error("BES at bus {bus}: {what} {value} kW outside [0, {limit}]")]
    LimitViolation {
        bus: BusId,
        what: &'static str,
        value: f64,
        limit: f64,
    },
}

fn default_power_factor() -> f64 {
    0.97
}

fn default_scale() -> f64 {
    1.0
}

/// Constant-power household load. Profile values are kW, multiplied by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadUnit {
    pub bus: BusId,
    pub profile: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Lagging power factor used to derive reactive demand.
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
}

impl LoadUnit {
    pub fn active(&self, profile_kw: f64) -> f64 {
        (profile_kw * self.scale).max(0.0)
    }

    pub fn reactive(&self, p_kw: f64) -> f64 {
        p_kw * self.power_factor.acos().tan()
    }
}

/// Rooftop PV system. Profile values are normalised irradiance in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub bus: BusId,
    /// Inverter apparent rating, kVA.
    pub s_rated: f64,
    /// Module peak power, kWp.
    pub scale: f64,
    pub profile: String,
}

impl PvUnit {
    pub fn output(&self, irradiance_frac: f64) -> f64 {
        (self.scale * irradiance_frac.max(0.0)).min(self.s_rated)
    }
}

/// Plug-in balcony unit: `gamma2` W of modules behind a `gamma1` W microinverter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpvUnit {
    pub bus: BusId,
    pub gamma1: f64,
    pub gamma2: f64,
    pub profile: String,
}

/// AC output of a mini-PV unit in kW: module production clipped by the inverter.
pub fn mpv_output(unit: &MpvUnit, irradiance_frac: f64) -> f64 {
    let frac = irradiance_frac.clamp(0.0, 1.0);
    (unit.gamma2 * frac).min(unit.gamma1) / 1000.0
}

fn soc_min_default() -> f64 {
    0.20
}
fn soc_max_default() -> f64 {
    0.90
}
fn mu_c_default() -> f64 {
    0.95
}
fn mu_d_default() -> f64 {
    0.95
}
fn mu_s_default() -> f64 {
    // ~6.5 % per month spread over 15-minute steps
    0.065 / (30.0 * 96.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesUnit {
    pub bus: BusId,
    pub e_max: f64,
    pub p_cha_max: f64,
    pub p_dis_max: f64,
    /// Inverter apparent rating, kVA.
    pub s_rated: f64,
    #[serde(default = "soc_min_default")]
    pub soc_min: f64,
    #[serde(default = "soc_max_default")]
    pub soc_max: f64,
    #[serde(default = "mu_c_default")]
    pub mu_c: f64,
    #[serde(default = "mu_d_default")]
    pub mu_d: f64,
    /// Mean self-discharge per step, as a fraction of `e_max`.
    #[serde(default = "mu_s_default")]
    pub mu_s: f64,
    /// Standard deviations; `None` means 1 % of the matching mean.
    #[serde(default)]
    pub sigma_c: Option<f64>,
    #[serde(default)]
    pub sigma_d: Option<f64>,
    #[serde(default)]
    pub sigma_s: Option<f64>,
    /// Initial state of charge; `None` starts at `soc_min`.
    #[serde(default)]
    pub initial_soc: Option<f64>,
}

impl BesUnit {
    pub fn new(bus: BusId, e_max: f64, p_max: f64) -> Self {
        Self {
            bus,
            e_max,
            p_cha_max: p_max,
            p_dis_max: p_max,
            s_rated: p_max,
            soc_min: soc_min_default(),
            soc_max: soc_max_default(),
            mu_c: mu_c_default(),
            mu_d: mu_d_default(),
            mu_s: mu_s_default(),
            sigma_c: None,
            sigma_d: None,
            sigma_s: None,
            initial_soc: None,
        }
    }

    pub fn sigmas(&self) -> (f64, f64, f64) {
        (
            self.sigma_c.unwrap_or(0.01 * self.mu_c),
            self.sigma_d.unwrap_or(0.01 * self.mu_d),
            self.sigma_s.unwrap_or(0.01 * self.mu_s),
        )
    }

    /// Invariant violations as `(field, message)` pairs.
    pub fn validate(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            out.push((
                "soc",
                format!("need 0 <= soc_min < soc_max <= 1, got {} / {}", self.soc_min, self.soc_max),
            ));
        }
        if !(self.e_max > 0.0) {
            out.push(("e_max", format!("must be positive, got {}", self.e_max)));
        }
        if !(self.p_cha_max > 0.0 && self.p_dis_max > 0.0) {
            out.push(("p_max", "charge and discharge limits must be positive".into()));
        }
        if self.p_cha_max.max(self.p_dis_max) > self.s_rated + POWER_EPS {
            out.push((
                "s_rated",
                format!("inverter rating {} below power limits", self.s_rated),
            ));
        }
        if !(self.mu_c > 0.0 && self.mu_c <= 1.0 && self.mu_d > 0.0 && self.mu_d <= 1.0) {
            out.push(("mu", "charge/discharge efficiencies must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.mu_s) {
            out.push(("mu_s", "self-discharge must lie in [0, 1)".into()));
        }
        let (sc, sd, ss) = self.sigmas();
        if sc < 0.0 || sd < 0.0 || ss < 0.0 {
            out.push(("sigma", "standard deviations must be non-negative".into()));
        }
        if let Some(s) = self.initial_soc {
            if !(0.0..=self.soc_max).contains(&s) {
                out.push(("initial_soc", format!("{s} outside [0, soc_max]")));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiencies {
    pub cha: f64,
    pub dis: f64,
    pub self_discharge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesState {
    pub energy: f64,
    pub soc: f64,
    pub eta_cha: f64,
    pub eta_dis: f64,
    pub eta_self: f64,
}

impl BesState {
    pub fn initial(unit: &BesUnit) -> Self {
        let soc = unit.initial_soc.unwrap_or(unit.soc_min);
        Self::with_energy(unit, soc * unit.e_max)
    }

    pub fn with_energy(unit: &BesUnit, energy: f64) -> Self {
        Self {
            energy,
            soc: energy / unit.e_max,
            eta_cha: unit.mu_c,
            eta_dis: unit.mu_d,
            eta_self: unit.mu_s,
        }
    }

    pub fn set_efficiencies(&mut self, eff: Efficiencies) {
        self.eta_cha = eff.cha;
        self.eta_dis = eff.dis;
        self.eta_self = eff.self_discharge;
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lo: f64, hi: f64, open_lo: bool) -> f64 {
    if sigma <= 0.0 {
        return mu;
    }
    let normal = Normal::new(mu, sigma).expect("finite sigma");
    let inside = |x: f64| (if open_lo { x > lo } else { x >= lo }) && x <= hi;
    for _ in 0..64 {
        let x = normal.sample(rng);
        if inside(x) {
            return x;
        }
    }
    mu.clamp(lo, hi)
}

/// Draws one set of efficiencies from normal distributions restricted to
/// `eta_cha, eta_dis in (0, 1]` and `eta_self in [0, 1)`.
pub fn sample_efficiencies<R: Rng + ?Sized>(unit: &BesUnit, rng: &mut R) -> Efficiencies {
    let (sc, sd, ss) = unit.sigmas();
    let cha = truncated_normal(rng, unit.mu_c, sc, 0.0, 1.0, true);
    let dis = truncated_normal(rng, unit.mu_d, sd, 0.0, 1.0, true);
    let self_discharge = truncated_normal(rng, unit.mu_s, ss, 0.0, 1.0 - f64::EPSILON, false);
    Efficiencies {
        cha,
        dis,
        self_discharge,
    }
}

/// Self-discharge energy this step. The battery management reserve below
/// `soc_min` is never drained by self-discharge.
pub fn self_discharge_loss(unit: &BesUnit, state: &BesState) -> f64 {
    let reserve = unit.soc_min * unit.e_max;
    (state.eta_self * unit.e_max).min((state.energy - reserve).max(0.0))
}

/// Largest charging power magnitude (kW) allowed this step.
pub fn max_charge(unit: &BesUnit, state: &BesState, dt: f64) -> f64 {
    let after_loss = state.energy - self_discharge_loss(unit, state);
    let headroom = (unit.soc_max * unit.e_max - after_loss).max(0.0);
    unit.p_cha_max.min(headroom / (state.eta_cha * dt))
}

/// Largest discharging power (kW) allowed this step.
pub fn max_discharge(unit: &BesUnit, state: &BesState, dt: f64) -> f64 {
    let after_loss = state.energy - self_discharge_loss(unit, state);
    let available = (after_loss - unit.soc_min * unit.e_max).max(0.0);
    unit.p_dis_max.min(available * state.eta_dis / dt)
}

/// Shrinks a signed power request (discharge positive) to what the BES can
/// deliver this step without leaving its power limits or SoC band.
pub fn feasible_power(unit: &BesUnit, state: &BesState, requested: f64, dt: f64) -> f64 {
    if requested > 0.0 {
        requested.min(max_discharge(unit, state, dt))
    } else if requested < 0.0 {
        0.0 - (-requested).min(max_charge(unit, state, dt))
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BesStepOutcome {
    pub state: BesState,
    /// Realised charging power, <= 0.
    pub p_cha: f64,
    /// Realised discharging power, >= 0.
    pub p_dis: f64,
    pub self_loss: f64,
}

/// Advances the stored energy by one step:
/// `E_t = E_{t-1} - (eta_cha p_cha + p_dis / eta_dis) dt - self_loss`.
pub fn bes_step(
    unit: &BesUnit,
    state: &BesState,
    p_cha: f64,
    p_dis: f64,
    dt: f64,
) -> Result<BesStepOutcome, DerError> {
    if p_cha != 0.0 && p_dis != 0.0 {
        return Err(DerError::MutualExclusionViolation {
            bus: unit.bus,
            p_cha,
            p_dis,
        });
    }
    if p_cha > 0.0 || -p_cha > unit.p_cha_max + POWER_EPS {
        return Err(DerError::LimitViolation {
            bus: unit.bus,
            what: "charge",
            value: -p_cha,
            limit: unit.p_cha_max,
        });
    }
    if p_dis < 0.0 || p_dis > unit.p_dis_max + POWER_EPS {
        return Err(DerError::LimitViolation {
            bus: unit.bus,
            what: "discharge",
            value: p_dis,
            limit: unit.p_dis_max,
        });
    }
    let p_cha = if p_cha < 0.0 {
        feasible_power(unit, state, p_cha, dt)
    } else {
        0.0
    };
    let p_dis = if p_dis > 0.0 {
        feasible_power(unit, state, p_dis, dt)
    } else {
        0.0
    };
    let self_loss = self_discharge_loss(unit, state);
    let mut energy =
        state.energy - (state.eta_cha * p_cha + p_dis / state.eta_dis) * dt - self_loss;
    // snap rounding residue onto the band edges
    let (lo, hi) = (unit.soc_min * unit.e_max, unit.soc_max * unit.e_max);
    if energy > hi && energy - hi < 1e-9 {
        energy = hi;
    }
    if energy < lo && lo - energy < 1e-9 && state.energy >= lo {
        energy = lo;
    }
    let energy = energy.max(0.0);
    let mut next = *state;
    next.energy = energy;
    next.soc = energy / unit.e_max;
    Ok(BesStepOutcome {
        state: next,
        p_cha,
        p_dis,
        self_loss,
    })
}

/// Splits a signed power into `(p_cha, p_dis)`.
pub fn split_power(p: f64) -> (f64, f64) {
    if p < 0.0 {
        (p, 0.0)
    } else {
        (0.0, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> BesUnit {
        let mut u = BesUnit::new(1, 10.0, 5.0);
        u.mu_s = 0.0;
        u
    }

    fn state(u: &BesUnit, energy: f64, eta_c: f64, eta_d: f64) -> BesState {
        let mut s = BesState::with_energy(u, energy);
        s.eta_cha = eta_c;
        s.eta_dis = eta_d;
        s.eta_self = 0.0;
        s
    }

    #[test]
    fn mpv_clipping() {
        let m = |g1, g2| MpvUnit {
            bus: 1,
            gamma1: g1,
            gamma2: g2,
            profile: "mpv".into(),
        };
        assert!((mpv_output(&m(800.0, 2000.0), 1.0) - 0.8).abs() < 1e-15);
        assert_eq!(mpv_output(&m(800.0, 2000.0), 0.0), 0.0);
        assert!((mpv_output(&m(1000.0, 800.0), 0.5) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn charging_step() {
        let u = unit();
        let s = state(&u, 5.0, 0.95, 0.95);
        let out = bes_step(&u, &s, -2.0, 0.0, 0.25).unwrap();
        assert!((out.state.energy - 5.475).abs() < 1e-12);
        assert_eq!(out.p_cha, -2.0);
    }

    #[test]
    fn idle_step_keeps_energy() {
        let u = unit();
        let s = state(&u, 5.0, 0.95, 0.95);
        let out = bes_step(&u, &s, 0.0, 0.0, 0.25).unwrap();
        assert_eq!(out.state.energy, 5.0);
        assert_eq!(out.state.soc, 0.5);
    }

    #[test]
    fn step_errors() {
        let u = unit();
        let s = state(&u, 5.0, 0.95, 0.95);
        assert!(matches!(
            bes_step(&u, &s, -1.0, 1.0, 0.25),
            Err(DerError::MutualExclusionViolation { .. })
        ));
        assert!(matches!(
            bes_step(&u, &s, -6.0, 0.0, 0.25),
            Err(DerError::LimitViolation { .. })
        ));
        assert!(matches!(
            bes_step(&u, &s, 0.0, 5.5, 0.25),
            Err(DerError::LimitViolation { .. })
        ));
    }

    #[test]
    fn feasible_power_examples() {
        let u = unit();
        let s = state(&u, 5.0, 0.95, 0.95);
        assert_eq!(feasible_power(&u, &s, -10.0, 0.25), -5.0);
        let full = state(&u, 9.0, 0.95, 0.95);
        assert_eq!(feasible_power(&u, &full, -1.0, 0.25), 0.0);
        let low = state(&u, 2.2, 1.0, 1.0);
        let p = feasible_power(&u, &low, 2.0, 0.25);
        assert!((p - 0.8).abs() < 1e-12, "{p}");
    }

    #[test]
    fn feasible_power_is_idempotent() {
        let u = unit();
        for e in [0.0, 2.0, 2.1, 5.0, 8.9, 9.0] {
            let s = state(&u, e, 0.93, 0.97);
            for req in [-7.0, -1.0, -0.1, 0.0, 0.3, 2.0, 9.0] {
                let once = feasible_power(&u, &s, req, 0.25);
                assert_eq!(feasible_power(&u, &s, once, 0.25), once);
            }
        }
    }

    #[test]
    fn empty_start_only_charges() {
        let mut u = unit();
        u.initial_soc = Some(0.0);
        let s = BesState::initial(&u);
        assert_eq!(s.soc, 0.0);
        assert_eq!(feasible_power(&u, &s, 3.0, 0.25), 0.0);
        assert_eq!(feasible_power(&u, &s, -3.0, 0.25), -3.0);
    }

    #[test]
    fn self_discharge_respects_reserve() {
        let mut u = unit();
        u.mu_s = 0.01;
        let mut s = BesState::with_energy(&u, 2.05);
        s.eta_self = 0.01;
        let out = bes_step(&u, &s, 0.0, 0.0, 0.25).unwrap();
        assert!((out.state.energy - 2.0).abs() < 1e-12);
        let out = bes_step(&u, &out.state, 0.0, 0.0, 0.25).unwrap();
        assert!((out.state.energy - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_sigma_sampling_is_exact() {
        let mut u = unit();
        u.mu_s = 0.001;
        u.sigma_c = Some(0.0);
        u.sigma_d = Some(0.0);
        u.sigma_s = Some(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = sample_efficiencies(&u, &mut rng);
        assert_eq!((e.cha, e.dis, e.self_discharge), (u.mu_c, u.mu_d, u.mu_s));
    }

    #[test]
    fn sampling_is_deterministic() {
        let u = BesUnit::new(1, 10.0, 5.0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_efficiencies(&u, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn validation_flags_bad_band() {
        let mut u = unit();
        u.soc_min = 0.95;
        assert!(u.validate().iter().any(|(k, _)| *k == "soc"));
        assert!(unit().validate().is_empty());
    }
}
