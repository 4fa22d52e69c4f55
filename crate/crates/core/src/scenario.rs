//! Scenario documents and their resolution into runnable scenarios: device
//! lists, MPV placement by concentration, penetration, configuration variants
//! and measurement noise.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlMode;
use crate::der::{mpv_output, BesUnit, LoadUnit, MpvUnit, PvUnit};
use crate::grid_model::{partition_zones, validate_radial, BusId, BusKind, GridTopology, ZonePartition};
use crate::power_flow::VoltageLimits;
use crate::profiles::ProfileSet;
use crate::strategies::{DncWindows, StrategyKind};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationReport),
    #[error("load energy over the horizon is zero")]
    DivisionByZero,
}

// ---------------------------------------------------------------------------
// Document sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Topology JSON, relative to the config file.
    pub topology: PathBuf,
    #[serde(default = "one")]
    pub slack_voltage: f64,
    #[serde(default)]
    pub limits: VoltageLimits,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicesSection {
    #[serde(default)]
    pub loads: Vec<LoadUnit>,
    #[serde(default)]
    pub pv: Vec<PvUnit>,
    #[serde(default)]
    pub bes: Vec<BesUnit>,
    /// Profile columns MPV units draw from, one draw per control zone.
    #[serde(default)]
    pub mpv_profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    #[serde(default)]
    pub windows: DncWindows,
    /// Let storage inverters take part in reactive control. Defaults to on
    /// for the zone strategies only.
    #[serde(default)]
    pub bes_reactive: Option<bool>,
}

impl StrategySection {
    pub fn bes_reactive(&self) -> bool {
        self.bes_reactive.unwrap_or(self.kind.is_distributed())
    }
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            kind: StrategyKind::PvSc,
            windows: DncWindows::default(),
            bes_reactive: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSection {
    #[serde(flatten)]
    pub mode: ControlMode,
    /// Modes evaluated by `compare`; empty means the four standard modes.
    #[serde(default)]
    pub compare: Vec<ControlMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityParams {
    /// Fraction of load buses hosting an MPV unit.
    #[serde(default)]
    pub beta: f64,
    /// MPV inverter limit, W.
    #[serde(default = "gamma1_default")]
    pub gamma1: f64,
    /// MPV module peak power, W.
    #[serde(default = "gamma2_default")]
    pub gamma2: f64,
}

fn gamma1_default() -> f64 {
    800.0
}
fn gamma2_default() -> f64 {
    1600.0
}

impl Default for SensitivityParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            gamma1: gamma1_default(),
            gamma2: gamma2_default(),
        }
    }
}

impl SensitivityParams {
    pub fn validate(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.beta) {
            out.push(("beta", format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.gamma1 > 0.0) {
            out.push(("gamma1", format!("gamma1 {} W must be positive", self.gamma1)));
        }
        if !(self.gamma2 > 0.0) {
            out.push(("gamma2", format!("gamma2 {} W must be positive", self.gamma2)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseClass {
    Load,
    Pv,
    Mpv,
}

/// Multiplicative truncated Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "load_std")]
    pub load: f64,
    #[serde(default = "gen_std")]
    pub pv: f64,
    #[serde(default = "gen_std")]
    pub mpv: f64,
    /// Clip bound in multiples of the std.
    #[serde(default = "truncation_default")]
    pub truncation: f64,
    /// Overrides the run seed for noise streams.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn load_std() -> f64 {
    0.01
}
fn gen_std() -> f64 {
    0.1
}
fn truncation_default() -> f64 {
    3.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            load: load_std(),
            pv: gen_std(),
            mpv: gen_std(),
            truncation: truncation_default(),
            seed: None,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            load: 0.0,
            pv: 0.0,
            mpv: 0.0,
            ..Self::default()
        }
    }

    pub fn std(&self, class: NoiseClass) -> f64 {
        match class {
            NoiseClass::Load => self.load,
            NoiseClass::Pv => self.pv,
            NoiseClass::Mpv => self.mpv,
        }
    }

    pub fn validate(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (key, v) in [("load", self.load), ("pv", self.pv), ("mpv", self.mpv)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push((key, format!("std {v} must be finite and non-negative")));
            }
        }
        if !(self.truncation > 0.0) {
            out.push(("truncation", format!("truncation {} must be positive", self.truncation)));
        }
        out
    }
}

/// `value * (1 + eps)` with `eps` normal, clipped at `truncation * std`.
/// Generation classes never go negative.
pub fn apply_noise<R: Rng + ?Sized>(value: f64, class: NoiseClass, noise: &NoiseConfig, rng: &mut R) -> f64 {
    let sigma = noise.std(class);
    if sigma == 0.0 {
        return value;
    }
    let z: f64 = rng.sample(StandardNormal);
    let bound = noise.truncation * sigma;
    let eps = (z * sigma).clamp(-bound, bound);
    let out = value * (1.0 + eps);
    match class {
        NoiseClass::Load => out,
        NoiseClass::Pv | NoiseClass::Mpv => out.max(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Variant {
    #[default]
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "2024")]
    Y2024,
    #[serde(rename = "2034")]
    Y2034,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Y2024 => "2024",
            Variant::Y2034 => "2034",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scaling of device ratings for a configuration variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantMultipliers {
    #[serde(default = "one")]
    pub load: f64,
    #[serde(default = "one")]
    pub pv: f64,
    #[serde(default = "one")]
    pub bes: f64,
}

impl VariantMultipliers {
    pub fn builtin(variant: Variant) -> Self {
        let (load, pv, bes) = match variant {
            Variant::Base => (1.0, 1.0, 1.0),
            Variant::Y2024 => (1.05, 1.4, 1.5),
            Variant::Y2034 => (1.15, 2.2, 3.0),
        };
        Self { load, pv, bes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every sweep point uses the master seed (common random numbers).
    #[default]
    Common,
    /// Each point gets a seed hashed from (master, point index).
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Profile CSV, relative to the config file.
    pub profiles: PathBuf,
    /// Number of steps; defaults to every profile row after `start`.
    #[serde(default)]
    pub horizon: Option<usize>,
    /// Step length, hours.
    #[serde(default = "dt_default")]
    pub dt: f64,
    /// First profile row.
    #[serde(default)]
    pub start: usize,
    #[serde(default = "seed_default")]
    pub seed: u64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    #[serde(default)]
    pub variant: Variant,
    /// Leading steps left out of aggregated metrics.
    #[serde(default = "warmup_default")]
    pub warmup_steps: usize,
    /// Q(V) evaluations per step; 1 uses the previous step's voltage.
    #[serde(default = "one_usize")]
    pub qv_inner_iterations: usize,
    #[serde(default = "qv_tol_default")]
    pub qv_tolerance: f64,
    #[serde(default)]
    pub include_slack_in_vm: bool,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn dt_default() -> f64 {
    0.25
}
fn seed_default() -> u64 {
    42
}
fn warmup_default() -> usize {
    1
}
fn qv_tol_default() -> f64 {
    1e-4
}

/// A scenario document as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub devices: DevicesSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub sensitivity: SensitivityParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub run: RunSection,
    /// Overrides of the built-in variant multipliers, keyed by variant name.
    #[serde(default)]
    pub variants: BTreeMap<String, VariantMultipliers>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub source: Option<SourceText>,
}

/// Original document text, kept for line lookup in validation messages.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceText {
    pub path: PathBuf,
    pub text: String,
    pub toml: bool,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<toml>".into(),
            message: e.to_string(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: "<json>".into(),
            message: e.to_string(),
        })
    }

    /// Reads a TOML or JSON document; the extension picks the parser.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        let mut cfg = parsed.map_err(|e| match e {
            ScenarioError::Parse { message, .. } => ScenarioError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.source = Some(SourceText {
            path: path.to_path_buf(),
            text,
            toml: !is_json,
        });
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn multipliers(&self) -> VariantMultipliers {
        let v = self.run.variant;
        self.variants
            .get(v.name())
            .copied()
            .unwrap_or_else(|| VariantMultipliers::builtin(v))
    }

    /// Modes for `compare`: the configured list or the four standard ones.
    pub fn compare_modes(&self) -> Vec<ControlMode> {
        if self.control.compare.is_empty() {
            standard_modes()
        } else {
            self.control.compare.clone()
        }
    }
}

/// No control, Q(V), cos phi(P) and fixed cos phi 0.95 with default curves.
pub fn standard_modes() -> Vec<ControlMode> {
    use crate::control::{CosPhiCurve, Excitation, QmaxSource, QvCurve};
    vec![
        ControlMode::NoControl,
        ControlMode::QofV {
            curve: QvCurve::default(),
            q_max: QmaxSource::Capability,
        },
        ControlMode::QofP {
            curve: CosPhiCurve::default(),
            excitation: Excitation::Under,
        },
        ControlMode::FixedCosPhi {
            cos_phi: 0.95,
            excitation: Excitation::Under,
            p_threshold: 0.0,
        },
    ]
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Dotted key naming the offending setting, e.g. `qv.breakpoints`.
    pub key: String,
    pub message: String,
    pub file: Option<String>,
    pub line: Option<usize>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some(line)) => write!(f, "{file}:{line}: ")?,
            (Some(file), None) => write!(f, "{file}: ")?,
            _ => {}
        }
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn keys(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.key.as_str()).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// Line (1-based) of `leaf = ...` inside `[section...]` of a TOML text,
/// falling back to the section header.
fn locate(text: &str, section: &str, leaf: Option<&str>) -> Option<usize> {
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_start_matches('[').trim_end_matches(']').trim();
            let in_section = name == section || name.starts_with(&format!("{section}."));
            if in_section && header.is_none() {
                header = Some(i + 1);
            } else if header.is_some() && !in_section {
                break;
            }
            continue;
        }
        if let (Some(_), Some(leaf)) = (header, leaf) {
            let key = line.split('=').next().unwrap_or("").trim();
            if line.contains('=') && key == leaf {
                return Some(i + 1);
            }
            if line.contains(&format!("{leaf} =")) || line.contains(&format!("{leaf}=")) {
                return Some(i + 1);
            }
        }
    }
    header
}

struct Collector<'a> {
    source: Option<&'a SourceText>,
    report: ValidationReport,
}

impl Collector<'_> {
    fn push(&mut self, key: impl Into<String>, section: &str, leaf: Option<&str>, message: impl Into<String>) {
        let line = self
            .source
            .filter(|s| s.toml)
            .and_then(|s| locate(&s.text, section, leaf));
        self.report.violations.push(Violation {
            key: key.into(),
            message: message.into(),
            file: self.source.map(|s| s.path.display().to_string()),
            line,
        });
    }
}

fn mode_violations(c: &mut Collector<'_>, mode: &ControlMode, prefix: &str) {
    if let Err(msg) = mode.validate() {
        let (key, leaf) = match mode {
            ControlMode::QofV { .. } => ("qv.breakpoints", "v1"),
            ControlMode::QofP { .. } => ("cosphi.curve", "p1"),
            ControlMode::FixedCosPhi { .. } => ("control.cos_phi", "cos_phi"),
            ControlMode::NoControl => ("control.mode", "mode"),
        };
        c.push(format!("{prefix}{key}"), "control", Some(leaf), msg);
    }
}

/// Invariants of the document itself, without touching the file system.
pub fn validate_document(cfg: &ScenarioConfig) -> ValidationReport {
    let mut c = Collector {
        source: cfg.source.as_ref(),
        report: ValidationReport::default(),
    };
    if !(0.9..=1.1).contains(&cfg.grid.slack_voltage) {
        c.push(
            "grid.slack_voltage",
            "grid",
            Some("slack_voltage"),
            format!("{} pu outside [0.9, 1.1]", cfg.grid.slack_voltage),
        );
    }
    if let Err(msg) = cfg.grid.limits.validate() {
        c.push("grid.limits", "grid", Some("epsilon_v"), msg);
    }
    if !(cfg.run.dt > 0.0) {
        c.push("run.dt", "run", Some("dt"), format!("dt {} h must be positive", cfg.run.dt));
    }
    if cfg.run.horizon == Some(0) {
        c.push("run.horizon", "run", Some("horizon"), "horizon must be at least one step");
    }
    if !(1..=10).contains(&cfg.run.qv_inner_iterations) {
        c.push(
            "run.qv_inner_iterations",
            "run",
            Some("qv_inner_iterations"),
            format!("{} outside 1..=10", cfg.run.qv_inner_iterations),
        );
    }
    if !(cfg.run.qv_tolerance > 0.0) {
        c.push("run.qv_tolerance", "run", Some("qv_tolerance"), "must be positive");
    }
    mode_violations(&mut c, &cfg.control.mode, "");
    for (i, m) in cfg.control.compare.iter().enumerate() {
        mode_violations(&mut c, m, &format!("compare[{i}]."));
    }
    if let Err(msg) = cfg.strategy.windows.validate() {
        c.push("strategy.windows", "strategy", None, msg);
    }
    for (key, msg) in cfg.sensitivity.validate() {
        c.push(format!("sensitivity.{key}"), "sensitivity", Some(key), msg);
    }
    for (key, msg) in cfg.noise.validate() {
        c.push(format!("noise.{key}"), "noise", Some(key), msg);
    }
    let m = cfg.multipliers();
    for (key, v) in [("load", m.load), ("pv", m.pv), ("bes", m.bes)] {
        if !(v >= 0.0 && v.is_finite()) {
            c.push(format!("variants.{key}"), "variants", Some(key), format!("multiplier {v} must be non-negative"));
        }
    }
    for (i, l) in cfg.devices.loads.iter().enumerate() {
        if !(l.scale >= 0.0) {
            c.push(format!("devices.loads[{i}].scale"), "devices", Some("scale"), "must be non-negative");
        }
        if !(l.power_factor > 0.0 && l.power_factor <= 1.0) {
            c.push(
                format!("devices.loads[{i}].power_factor"),
                "devices",
                Some("power_factor"),
                format!("load_{}: power factor {} outside (0, 1]", l.bus, l.power_factor),
            );
        }
    }
    for (i, p) in cfg.devices.pv.iter().enumerate() {
        if !(p.s_rated > 0.0) || !(p.scale >= 0.0) {
            c.push(
                format!("devices.pv[{i}].s_rated"),
                "devices",
                Some("s_rated"),
                format!("pv_{}: s_rated must be positive and scale non-negative", p.bus),
            );
        }
    }
    for (i, b) in cfg.devices.bes.iter().enumerate() {
        for (field, msg) in b.validate() {
            c.push(
                format!("devices.bes[{i}].{field}"),
                "devices",
                Some(field),
                format!("bes_{}: {msg}", b.bus),
            );
        }
    }
    if cfg.sensitivity.beta > 0.0 && cfg.devices.mpv_profiles.is_empty() {
        c.push(
            "devices.mpv_profiles",
            "devices",
            Some("mpv_profiles"),
            "beta > 0 needs at least one MPV profile column",
        );
    }
    c.report
}

/// Element-level checks against the loaded topology and profiles.
fn validate_resolved(
    cfg: &ScenarioConfig,
    topology: &GridTopology,
    profiles: &ProfileSet,
    c: &mut Collector<'_>,
) {
    let n = topology.n_buses();
    let bus_ok = |b: BusId| b < n && topology.buses[b].kind != BusKind::Slack;
    let column = |c: &mut Collector<'_>, key: String, element: String, name: &str, normalized: bool| {
        match profiles.column(name) {
            None => c.push(
                key,
                "devices",
                Some("profile"),
                format!("{element}: missing profile column {name:?}"),
            ),
            Some(col) if normalized && col.iter().any(|v| !(0.0..=1.0).contains(v)) => c.push(
                key,
                "devices",
                Some("profile"),
                format!("{element}: profile column {name:?} leaves [0, 1]"),
            ),
            Some(col) if col.iter().any(|v| !v.is_finite()) => c.push(
                key,
                "devices",
                Some("profile"),
                format!("{element}: profile column {name:?} holds non-finite values"),
            ),
            _ => {}
        }
    };
    for (i, l) in cfg.devices.loads.iter().enumerate() {
        if !bus_ok(l.bus) {
            c.push(format!("devices.loads[{i}].bus"), "devices", Some("bus"), format!("load_{}: no such load bus", l.bus));
        }
        column(c, format!("devices.loads[{i}].profile"), format!("load_{}", l.bus), &l.profile, false);
    }
    for (i, p) in cfg.devices.pv.iter().enumerate() {
        if !bus_ok(p.bus) {
            c.push(format!("devices.pv[{i}].bus"), "devices", Some("bus"), format!("pv_{}: no such bus", p.bus));
        }
        column(c, format!("devices.pv[{i}].profile"), format!("pv_{}", p.bus), &p.profile, true);
    }
    for (i, b) in cfg.devices.bes.iter().enumerate() {
        if !bus_ok(b.bus) {
            c.push(format!("devices.bes[{i}].bus"), "devices", Some("bus"), format!("bes_{}: no such bus", b.bus));
        }
    }
    for (i, name) in cfg.devices.mpv_profiles.iter().enumerate() {
        column(c, format!("devices.mpv_profiles[{i}]"), format!("mpv pool entry {i}"), name, true);
    }
    let horizon = cfg.run.horizon.unwrap_or(profiles.len().saturating_sub(cfg.run.start));
    if horizon == 0 || cfg.run.start + horizon > profiles.len() {
        c.push(
            "run.horizon",
            "run",
            Some("horizon"),
            format!(
                "profiles hold {} rows, need start {} + horizon {}",
                profiles.len(),
                cfg.run.start,
                horizon
            ),
        );
    }
    if let Some(dt) = profiles.dt_hours() {
        if (dt - cfg.run.dt).abs() > 1e-9 {
            c.push("run.dt", "run", Some("dt"), format!("dt {} h differs from profile spacing {dt} h", cfg.run.dt));
        }
    }
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

/// Random stream ids. Each element draws from its own stream so adding or
/// removing one element leaves every other element's draws unchanged.
pub mod streams {
    pub const PLACEMENT: u64 = 1;
    pub const MPV_PROFILE: u64 = 2;
    pub const EFFICIENCY: u64 = 1 << 20;
    pub const NOISE_LOAD: u64 = 2 << 20;
    pub const NOISE_PV: u64 = 3 << 20;
    pub const NOISE_MPV: u64 = 4 << 20;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A validated scenario with loaded topology and profiles and placed MPVs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Arc<GridTopology>,
    pub profiles: Arc<ProfileSet>,
    pub zones: Arc<ZonePartition>,
    /// Devices after applying the variant multipliers.
    pub loads: Vec<LoadUnit>,
    pub pv: Vec<PvUnit>,
    pub bes: Vec<BesUnit>,
    pub mpv: Vec<MpvUnit>,
    pub horizon: usize,
    pub seed: u64,
}

/// Loads topology and profiles and runs every check.
pub fn check(cfg: &ScenarioConfig) -> (ValidationReport, Option<(GridTopology, ProfileSet)>) {
    let mut c = Collector {
        source: cfg.source.as_ref(),
        report: validate_document(cfg),
    };
    let topo = match GridTopology::load(cfg.resolve(&cfg.grid.topology)) {
        Ok(t) => {
            let r = validate_radial(&t);
            for v in &r.violations {
                c.push("grid.topology", "grid", Some("topology"), v.to_string());
            }
            r.is_ok().then_some(t)
        }
        Err(e) => {
            c.push("grid.topology", "grid", Some("topology"), e.to_string());
            None
        }
    };
    let profiles = match ProfileSet::load(&cfg.resolve(&cfg.run.profiles)) {
        Ok(p) => Some(p),
        Err(e) => {
            c.push(
                "run.profiles",
                "run",
                Some("profiles"),
                format!("{}: {e}", cfg.run.profiles.display()),
            );
            None
        }
    };
    match (topo, profiles) {
        (Some(t), Some(p)) => {
            validate_resolved(cfg, &t, &p, &mut c);
            (c.report, Some((t, p)))
        }
        _ => (c.report, None),
    }
}

impl Scenario {
    pub fn build(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let (report, loaded) = check(&config);
        match loaded {
            Some((t, p)) if report.is_ok() => Self::from_parts(config, Arc::new(t), Arc::new(p)),
            _ => Err(ScenarioError::Invalid(report)),
        }
    }

    /// Builds from preloaded data, checking the element-level invariants.
    pub fn from_parts(
        config: ScenarioConfig,
        topology: Arc<GridTopology>,
        profiles: Arc<ProfileSet>,
    ) -> Result<Self, ScenarioError> {
        let mut c = Collector {
            source: config.source.as_ref(),
            report: validate_document(&config),
        };
        let radial = validate_radial(&topology);
        for v in &radial.violations {
            c.push("grid.topology", "grid", Some("topology"), v.to_string());
        }
        if radial.is_ok() {
            validate_resolved(&config, &topology, &profiles, &mut c);
        }
        if !c.report.is_ok() {
            return Err(ScenarioError::Invalid(c.report));
        }
        let zones = partition_zones(&topology).map_err(|e| {
            ScenarioError::Invalid(ValidationReport {
                violations: vec![Violation {
                    key: "grid.topology".into(),
                    message: e.to_string(),
                    file: None,
                    line: None,
                }],
            })
        })?;
        let m = config.multipliers();
        let loads = config
            .devices
            .loads
            .iter()
            .map(|l| LoadUnit {
                scale: l.scale * m.load,
                ..l.clone()
            })
            .collect();
        let pv = config
            .devices
            .pv
            .iter()
            .map(|p| PvUnit {
                s_rated: p.s_rated * m.pv,
                scale: p.scale * m.pv,
                ..p.clone()
            })
            .collect();
        let bes = config
            .devices
            .bes
            .iter()
            .map(|b| BesUnit {
                e_max: b.e_max * m.bes,
                p_cha_max: b.p_cha_max * m.bes,
                p_dis_max: b.p_dis_max * m.bes,
                s_rated: b.s_rated * m.bes,
                ..b.clone()
            })
            .collect();
        let horizon = config
            .run
            .horizon
            .unwrap_or(profiles.len() - config.run.start);
        let seed = config.run.seed;
        let mut s = Self {
            config,
            topology,
            profiles,
            zones: Arc::new(zones),
            loads,
            pv,
            bes,
            mpv: Vec::new(),
            horizon,
            seed,
        };
        s.place();
        Ok(s)
    }

    fn place(&mut self) {
        let buses = load_buses(&self.loads);
        let mut rng = stream_rng(self.seed, streams::PLACEMENT);
        let mut profile_rng = stream_rng(self.seed, streams::MPV_PROFILE);
        self.mpv = place_mpv(
            &buses,
            &self.config.sensitivity,
            &self.zones,
            &self.config.devices.mpv_profiles,
            &mut rng,
            &mut profile_rng,
        );
    }

    /// Same scenario with other sensitivity parameters (and MPVs re-placed).
    pub fn with_sensitivity(&self, params: SensitivityParams) -> Self {
        let mut s = self.clone();
        s.config.sensitivity = params;
        s.place();
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s.config.run.seed = seed;
        s.place();
        s
    }

    pub fn with_mode(&self, mode: ControlMode) -> Self {
        let mut s = self.clone();
        s.config.control.mode = mode;
        s
    }

    pub fn with_strategy(&self, kind: StrategyKind) -> Self {
        let mut s = self.clone();
        s.config.strategy.kind = kind;
        s
    }

    pub fn with_noise(&self, noise: NoiseConfig) -> Self {
        let mut s = self.clone();
        s.config.noise = noise;
        s
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        let mut s = self.clone();
        s.horizon = horizon.min(self.profiles.len() - self.config.run.start);
        s.config.run.horizon = Some(s.horizon);
        s
    }

    pub fn noise_seed(&self) -> u64 {
        self.config.noise.seed.unwrap_or(self.seed)
    }

    pub fn dt(&self) -> f64 {
        self.config.run.dt
    }

    /// Load energy over the horizon without noise, kWh.
    pub fn load_energy(&self) -> f64 {
        load_energy(&self.loads, &self.profiles, self.config.run.start, self.horizon, self.dt())
    }

    /// MPV energy over load energy, both noise free.
    pub fn alpha(&self) -> Result<f64, ScenarioError> {
        penetration_alpha(
            &self.mpv,
            &self.profiles,
            self.load_energy(),
            self.config.run.start,
            self.horizon,
            self.dt(),
        )
    }

    /// MPV energy relative to the energy the transformer could carry over the
    /// horizon at its rating.
    pub fn alpha_feeder(&self) -> Option<f64> {
        let t = self.topology.transformer.as_ref()?;
        let cap = t.s_rated * self.horizon as f64 * self.dt();
        Some(mpv_energy(&self.mpv, &self.profiles, self.config.run.start, self.horizon, self.dt()) / cap)
    }
}

/// Sorted, de-duplicated buses carrying a load.
pub fn load_buses(loads: &[LoadUnit]) -> Vec<BusId> {
    let mut b: Vec<BusId> = loads.iter().map(|l| l.bus).collect();
    b.sort_unstable();
    b.dedup();
    b
}

/// Places `round(beta * N)` MPV units on load buses. The buses come from one
/// shuffle of `load_buses`, so for a fixed `rng` seed a larger beta only adds
/// units. Each zone draws one profile column from `pool`; load buses on the
/// backbone draw individually.
pub fn place_mpv<R: Rng + ?Sized>(
    load_buses: &[BusId],
    params: &SensitivityParams,
    zones: &ZonePartition,
    pool: &[String],
    rng: &mut R,
    profile_rng: &mut R,
) -> Vec<MpvUnit> {
    let mut order = load_buses.to_vec();
    order.shuffle(rng);
    let mut zone_profile: Vec<usize> = Vec::with_capacity(zones.zones.len());
    let mut backbone_profile: BTreeMap<BusId, usize> = BTreeMap::new();
    if !pool.is_empty() {
        for _ in &zones.zones {
            zone_profile.push(profile_rng.random_range(0..pool.len()));
        }
        for &b in load_buses {
            if !zones.zone_of.contains_key(&b) {
                backbone_profile.insert(b, profile_rng.random_range(0..pool.len()));
            }
        }
    }
    let count = (params.beta * load_buses.len() as f64).round() as usize;
    let mut units: Vec<MpvUnit> = order
        .into_iter()
        .take(count.min(load_buses.len()))
        .map(|bus| {
            let idx = match zones.zone_of.get(&bus) {
                Some(&z) => zone_profile.get(z).copied(),
                None => backbone_profile.get(&bus).copied(),
            };
            MpvUnit {
                bus,
                gamma1: params.gamma1,
                gamma2: params.gamma2,
                profile: idx.map(|i| pool[i].clone()).unwrap_or_default(),
            }
        })
        .collect();
    units.sort_by_key(|u| u.bus);
    units
}

pub fn load_energy(loads: &[LoadUnit], profiles: &ProfileSet, start: usize, horizon: usize, dt: f64) -> f64 {
    loads
        .iter()
        .filter_map(|l| profiles.column(&l.profile).map(|c| (l, c)))
        .map(|(l, c)| c[start..start + horizon].iter().map(|&v| l.active(v)).sum::<f64>() * dt)
        .sum()
}

pub fn mpv_energy(units: &[MpvUnit], profiles: &ProfileSet, start: usize, horizon: usize, dt: f64) -> f64 {
    units
        .iter()
        .filter_map(|u| profiles.column(&u.profile).map(|c| (u, c)))
        .map(|(u, c)| c[start..start + horizon].iter().map(|&v| mpv_output(u, v)).sum::<f64>() * dt)
        .fold(0.0, |a, e| a + e)
}

/// MPV energy over the horizon divided by `load_energy` (kWh).
pub fn penetration_alpha(
    units: &[MpvUnit],
    profiles: &ProfileSet,
    load_energy: f64,
    start: usize,
    horizon: usize,
    dt: f64,
) -> Result<f64, ScenarioError> {
    if load_energy == 0.0 {
        return Err(ScenarioError::DivisionByZero);
    }
    Ok(mpv_energy(units, profiles, start, horizon, dt) / load_energy)
}
