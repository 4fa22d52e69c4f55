//! Active-power dispatch strategies for PV, BES and combined PV-BES systems.
//!
//! Decentralized strategies decide from the local residual `pv - load` at the
//! point of common coupling; distributed strategies pool the residual of a whole
//! feeder zone and share it between the zone's batteries in proportion to what
//! each can currently absorb or deliver. Mini-PV units are not dispatched.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::der::{feasible_power, BesState, BesUnit};
use crate::grid_model::{BusId, ZonePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// PV covers local load, residual is fed into the grid. Storage idles.
    PvSc,
    /// Storage follows the day-night cycle windows at full power.
    BesDnc,
    PvBesDecentralizedSc,
    PvBesDistributedSc,
    PvBesDistributedScDnc,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::PvSc,
        StrategyKind::BesDnc,
        StrategyKind::PvBesDecentralizedSc,
        StrategyKind::PvBesDistributedSc,
        StrategyKind::PvBesDistributedScDnc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::PvSc => "pv_sc",
            StrategyKind::BesDnc => "bes_dnc",
            StrategyKind::PvBesDecentralizedSc => "pv_bes_decentralized_sc",
            StrategyKind::PvBesDistributedSc => "pv_bes_distributed_sc",
            StrategyKind::PvBesDistributedScDnc => "pv_bes_distributed_sc_dnc",
        }
    }

    pub fn is_distributed(self) -> bool {
        matches!(
            self,
            StrategyKind::PvBesDistributedSc | StrategyKind::PvBesDistributedScDnc
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Minutes after midnight, written as `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TimeOfDay(pub u32);

impl TimeOfDay {
    pub fn hm(h: u32, m: u32) -> Self {
        Self(h * 60 + m)
    }
}

impl TryFrom<String> for TimeOfDay {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let (h, m) = s
            .split_once(':')
            .ok_or_else(|| format!("time `{s}` is not HH:MM"))?;
        let h: u32 = h.trim().parse().map_err(|_| format!("bad hour in `{s}`"))?;
        let m: u32 = m.trim().parse().map_err(|_| format!("bad minute in `{s}`"))?;
        if h > 23 || m > 59 {
            return Err(format!("time `{s}` out of range"));
        }
        Ok(Self::hm(h, m))
    }
}

impl From<TimeOfDay> for String {
    fn from(t: TimeOfDay) -> Self {
        t.to_string()
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

fn in_window(start: TimeOfDay, end: TimeOfDay, t: u32) -> bool {
    if start.0 < end.0 {
        start.0 <= t && t < end.0
    } else {
        t >= start.0 || t < end.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DncWindows {
    pub charge_start: TimeOfDay,
    pub charge_end: TimeOfDay,
    pub discharge_start: TimeOfDay,
    pub discharge_end: TimeOfDay,
}

impl Default for DncWindows {
    fn default() -> Self {
        Self {
            charge_start: TimeOfDay::hm(6, 0),
            charge_end: TimeOfDay::hm(18, 0),
            discharge_start: TimeOfDay::hm(18, 0),
            discharge_end: TimeOfDay::hm(6, 0),
        }
    }
}

impl DncWindows {
    /// Windows must be non-empty, back to back, and together cover the day.
    pub fn validate(&self) -> Result<(), String> {
        if self.charge_start == self.charge_end || self.discharge_start == self.discharge_end {
            return Err("windows must not be empty".into());
        }
        if self.charge_end != self.discharge_start || self.discharge_end != self.charge_start {
            return Err(format!(
                "charge {}-{} and discharge {}-{} must be back to back and cover the day",
                self.charge_start, self.charge_end, self.discharge_start, self.discharge_end
            ));
        }
        Ok(())
    }

    pub fn charging(&self, minute_of_day: u32) -> bool {
        in_window(self.charge_start, self.charge_end, minute_of_day)
    }

    pub fn discharging(&self, minute_of_day: u32) -> bool {
        in_window(self.discharge_start, self.discharge_end, minute_of_day)
    }
}

/// Grid exchange of a bus without storage: positive exports the PV residual,
/// negative draws the deficit.
pub fn dispatch_pv_sc(pv_gen: f64, load: f64) -> f64 {
    pv_gen - load
}

/// Day-night cycle: full-power charging in the charge window, full-power
/// discharging in the discharge window, each shaped by the SoC band.
pub fn dispatch_bes_dnc(
    unit: &BesUnit,
    state: &BesState,
    windows: &DncWindows,
    minute_of_day: u32,
    dt: f64,
) -> f64 {
    if windows.charging(minute_of_day) && state.soc < unit.soc_max {
        feasible_power(unit, state, -unit.p_cha_max, dt)
    } else if windows.discharging(minute_of_day) && state.soc > unit.soc_min {
        feasible_power(unit, state, unit.p_dis_max, dt)
    } else {
        0.0
    }
}

/// Local self-consumption: surplus charges the battery, deficit discharges it.
/// Returns the signed BES power.
pub fn dispatch_pvbes_decentralized(
    unit: &BesUnit,
    state: &BesState,
    pv_gen: f64,
    load: f64,
    dt: f64,
) -> f64 {
    let residual = pv_gen - load;
    feasible_power(unit, state, -residual, dt)
}

/// Splits `amount >= 0` over devices with capacities `caps` proportionally,
/// never exceeding any capacity.
pub fn allocate_proportional(amount: f64, caps: &[f64]) -> Vec<f64> {
    let total: f64 = caps.iter().sum();
    if !(total > 0.0) || amount <= 0.0 {
        return vec![0.0; caps.len()];
    }
    if amount >= total {
        return caps.to_vec();
    }
    caps.iter()
        .map(|&c| (amount * (c / total)).min(c))
        .collect()
}

/// Zone self-consumption: the joint residual is shared between the zone's
/// batteries in proportion to their feasible charge or discharge power.
pub fn dispatch_pvbes_distributed(
    units: &[&BesUnit],
    states: &[BesState],
    zone_pv: f64,
    zone_load: f64,
    dt: f64,
) -> Vec<f64> {
    zone_dispatch(units, states, zone_pv - zone_load, dt, true, true)
}

/// Zone self-consumption gated by the day-night windows: charging only in the
/// charge window, discharging only in the discharge window.
pub fn dispatch_pvbes_sc_dnc(
    windows: &DncWindows,
    minute_of_day: u32,
    units: &[&BesUnit],
    states: &[BesState],
    zone_pv: f64,
    zone_load: f64,
    dt: f64,
) -> Vec<f64> {
    zone_dispatch(
        units,
        states,
        zone_pv - zone_load,
        dt,
        windows.charging(minute_of_day),
        windows.discharging(minute_of_day),
    )
}

fn zone_dispatch(
    units: &[&BesUnit],
    states: &[BesState],
    residual: f64,
    dt: f64,
    may_charge: bool,
    may_discharge: bool,
) -> Vec<f64> {
    if residual > 0.0 && may_charge {
        let caps: Vec<f64> = units
            .iter()
            .zip(states)
            .map(|(u, s)| -feasible_power(u, s, -u.p_cha_max, dt))
            .collect();
        allocate_proportional(residual, &caps)
            .into_iter()
            .map(|x| 0.0 - x)
            .collect()
    } else if residual < 0.0 && may_discharge {
        let caps: Vec<f64> = units
            .iter()
            .zip(states)
            .map(|(u, s)| feasible_power(u, s, u.p_dis_max, dt))
            .collect();
        allocate_proportional(-residual, &caps)
    } else {
        vec![0.0; units.len()]
    }
}

/// Everything one dispatch step needs. Per-bus vectors are kW indexed by bus id.
#[derive(Debug, Clone, Copy)]
pub struct DispatchInput<'a> {
    pub pv: &'a [f64],
    pub load: &'a [f64],
    pub bes_units: &'a [BesUnit],
    pub bes_states: &'a [BesState],
    pub zones: &'a ZonePartition,
    pub windows: &'a DncWindows,
    pub minute_of_day: u32,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchResult {
    /// Signed power per BES unit (discharge positive), same order as the input.
    pub bes_power: Vec<f64>,
    /// `pv - load + bes` per bus: positive is fed to the grid.
    pub bus_exchange: Vec<f64>,
    /// `sum pv - sum load` per zone.
    pub zone_residual: Vec<f64>,
}

impl DispatchResult {
    pub fn import_export(&self) -> (f64, f64) {
        let export = self.bus_exchange.iter().filter(|x| **x > 0.0).sum();
        let import = -self.bus_exchange.iter().filter(|x| **x < 0.0).sum::<f64>();
        (import, export)
    }
}

pub fn dispatch(kind: StrategyKind, input: &DispatchInput<'_>) -> DispatchResult {
    let n = input.pv.len();
    let nz = input.zones.zones.len();
    let mut zone_pv = vec![0.0; nz];
    let mut zone_load = vec![0.0; nz];
    for bus in 0..n {
        if let Some(&z) = input.zones.zone_of.get(&bus) {
            zone_pv[z] += input.pv[bus];
            zone_load[z] += input.load[bus];
        }
    }
    let zone_residual: Vec<f64> = zone_pv.iter().zip(&zone_load).map(|(p, l)| p - l).collect();

    let mut bes_power = vec![0.0; input.bes_units.len()];
    let local = |i: usize| {
        let u = &input.bes_units[i];
        dispatch_pvbes_decentralized(u, &input.bes_states[i], input.pv[u.bus], input.load[u.bus], input.dt)
    };
    match kind {
        StrategyKind::PvSc => {}
        StrategyKind::BesDnc => {
            for (i, p) in bes_power.iter_mut().enumerate() {
                *p = dispatch_bes_dnc(
                    &input.bes_units[i],
                    &input.bes_states[i],
                    input.windows,
                    input.minute_of_day,
                    input.dt,
                );
            }
        }
        StrategyKind::PvBesDecentralizedSc => {
            for (i, p) in bes_power.iter_mut().enumerate() {
                *p = local(i);
            }
        }
        StrategyKind::PvBesDistributedSc | StrategyKind::PvBesDistributedScDnc => {
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); nz];
            for (i, u) in input.bes_units.iter().enumerate() {
                match input.zones.zone_of.get(&u.bus) {
                    Some(&z) => members[z].push(i),
                    None => bes_power[i] = local(i),
                }
            }
            for (z, idx) in members.iter().enumerate() {
                if idx.is_empty() {
                    continue;
                }
                let units: Vec<&BesUnit> = idx.iter().map(|&i| &input.bes_units[i]).collect();
                let states: Vec<BesState> = idx.iter().map(|&i| input.bes_states[i]).collect();
                let powers = if kind == StrategyKind::PvBesDistributedSc {
                    dispatch_pvbes_distributed(&units, &states, zone_pv[z], zone_load[z], input.dt)
                } else {
                    dispatch_pvbes_sc_dnc(
                        input.windows,
                        input.minute_of_day,
                        &units,
                        &states,
                        zone_pv[z],
                        zone_load[z],
                        input.dt,
                    )
                };
                for (&i, p) in idx.iter().zip(powers) {
                    bes_power[i] = p;
                }
            }
        }
    }

    let mut bus_exchange: Vec<f64> = (0..n).map(|b| dispatch_pv_sc(input.pv[b], input.load[b])).collect();
    for (u, p) in input.bes_units.iter().zip(&bes_power) {
        bus_exchange[u.bus] += p;
    }
    DispatchResult {
        bes_power,
        bus_exchange,
        zone_residual,
    }
}

/// Bus ids of the storage units, for logging.
pub fn bes_buses(units: &[BesUnit]) -> Vec<BusId> {
    units.iter().map(|u| u.bus).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(bus: BusId) -> BesUnit {
        let mut u = BesUnit::new(bus, 10.0, 5.0);
        u.mu_s = 0.0;
        u
    }

    fn state(u: &BesUnit, soc: f64) -> BesState {
        let mut s = BesState::with_energy(u, soc * u.e_max);
        s.eta_cha = 1.0;
        s.eta_dis = 1.0;
        s.eta_self = 0.0;
        s
    }

    #[test]
    fn pv_sc_residuals() {
        assert_eq!(dispatch_pv_sc(2.0, 1.0), 1.0);
        assert_eq!(dispatch_pv_sc(0.0, 0.7), -0.7);
        assert_eq!(dispatch_pv_sc(1.0, 1.0), 0.0);
    }

    #[test]
    fn dnc_examples() {
        let u = unit(1);
        let w = DncWindows::default();
        assert_eq!(dispatch_bes_dnc(&u, &state(&u, 0.5), &w, 7 * 60, 0.25), -5.0);
        assert_eq!(dispatch_bes_dnc(&u, &state(&u, 0.2), &w, 20 * 60, 0.25), 0.0);
        assert_eq!(dispatch_bes_dnc(&u, &state(&u, 0.9), &w, 20 * 60, 0.25), 5.0);
    }

    #[test]
    fn decentralized_examples() {
        let u = unit(1);
        assert_eq!(dispatch_pvbes_decentralized(&u, &state(&u, 0.5), 2.0, 1.0, 0.25), -1.0);
        assert_eq!(dispatch_pvbes_decentralized(&u, &state(&u, 0.9), 2.0, 1.0, 0.25), 0.0);
        assert_eq!(dispatch_pvbes_decentralized(&u, &state(&u, 0.2), 0.0, 1.0, 0.25), 0.0);
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(allocate_proportional(3.0, &[2.0, 2.0]), vec![1.5, 1.5]);
        let a = allocate_proportional(3.0, &[1.0, 4.0]);
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 2.4).abs() < 1e-15, "{a:?}");
        assert_eq!(allocate_proportional(9.0, &[1.0, 4.0]), vec![1.0, 4.0]);
        assert_eq!(allocate_proportional(1.0, &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn distributed_single_unit_matches_local() {
        let u = unit(1);
        let s = state(&u, 0.5);
        for (pv, load) in [(3.0, 1.0), (0.2, 4.0), (7.0, 0.5), (1.0, 1.0)] {
            let local = dispatch_pvbes_decentralized(&u, &s, pv, load, 0.25);
            let zone = dispatch_pvbes_distributed(&[&u], &[s], pv, load, 0.25);
            assert_eq!(zone, vec![local]);
        }
    }

    #[test]
    fn sc_dnc_gating() {
        let u = unit(1);
        let s = state(&u, 0.5);
        let w = DncWindows::default();
        assert_eq!(dispatch_pvbes_sc_dnc(&w, 12 * 60, &[&u], &[s], 3.0, 1.0, 0.25), vec![-2.0]);
        assert_eq!(dispatch_pvbes_sc_dnc(&w, 12 * 60, &[&u], &[s], 0.0, 1.0, 0.25), vec![0.0]);
        assert_eq!(dispatch_pvbes_sc_dnc(&w, 20 * 60, &[&u], &[s], 0.0, 1.0, 0.25), vec![1.0]);
    }

    #[test]
    fn windows_parse_and_validate() {
        let w = DncWindows::default();
        assert!(w.validate().is_ok());
        assert!(w.charging(6 * 60) && !w.charging(18 * 60));
        assert!(w.discharging(23 * 60) && w.discharging(5 * 60 + 45));
        let bad = DncWindows {
            charge_end: TimeOfDay::hm(17, 0),
            ..w
        };
        assert!(bad.validate().is_err());
        assert_eq!(TimeOfDay::try_from("06:30".to_string()).unwrap(), TimeOfDay(390));
        assert!(TimeOfDay::try_from("25:00".to_string()).is_err());
        assert_eq!("pv_bes_distributed_sc".parse::<StrategyKind>().unwrap(), StrategyKind::PvBesDistributedSc);
    }
}
