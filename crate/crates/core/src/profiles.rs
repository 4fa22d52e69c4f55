//! Time-series profiles: CSV ingestion, export and a synthetic summer
//! generator for loads, rooftop PV and mini-PV.
//!
//! CSV layout: first column an ISO-8601 timestamp, every further column one
//! named series. Load columns are kW, PV and MPV columns normalized to [0, 1].

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile io: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: cannot parse timestamp {value:?}")]
    Timestamp { row: usize, value: String },
    #[error("row {row}, column {column:?}: cannot parse value {value:?}")]
    Value {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: spacing differs from the first interval")]
    NonUniform { row: usize },
    #[error("profile set has no rows")]
    Empty,
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("column {column:?} has {got} values, expected {expected}")]
    Ragged {
        column: String,
        expected: usize,
        got: usize,
    },
}

/// Uniformly spaced named series sharing one timestamp axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    timestamps: Vec<NaiveDateTime>,
    names: Vec<String>,
    index: HashMap<String, usize>,
    columns: Vec<Vec<f64>>,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [TS_FORMAT, "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_local())
}

impl ProfileSet {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<Self, ProfileError> {
        if timestamps.is_empty() {
            return Err(ProfileError::Empty);
        }
        if timestamps.len() > 1 {
            let step = timestamps[1] - timestamps[0];
            if step <= Duration::zero() {
                return Err(ProfileError::NonUniform { row: 1 });
            }
            for (row, w) in timestamps.windows(2).enumerate() {
                if w[1] - w[0] != step {
                    return Err(ProfileError::NonUniform { row: row + 1 });
                }
            }
        }
        let mut index = HashMap::new();
        let mut names = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (name, values) in columns {
            if values.len() != timestamps.len() {
                return Err(ProfileError::Ragged {
                    column: name,
                    expected: timestamps.len(),
                    got: values.len(),
                });
            }
            if index.insert(name.clone(), names.len()).is_some() {
                return Err(ProfileError::DuplicateColumn(name));
            }
            names.push(name);
            data.push(values);
        }
        Ok(Self {
            timestamps,
            names,
            index,
            columns: data,
        })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ProfileError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let ts = record.get(0).unwrap_or("");
            timestamps.push(parse_timestamp(ts).ok_or_else(|| ProfileError::Timestamp {
                row: row + 1,
                value: ts.to_string(),
            })?);
            for (c, col) in columns.iter_mut().enumerate() {
                let raw = record.get(c + 1).unwrap_or("");
                let v: f64 = raw.parse().map_err(|_| ProfileError::Value {
                    row: row + 1,
                    column: headers[c].clone(),
                    value: raw.to_string(),
                })?;
                col.push(v);
            }
        }
        Self::new(timestamps, headers.into_iter().zip(columns).collect())
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ProfileError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (t, ts) in self.timestamps.iter().enumerate() {
            let mut row = vec![ts.format(TS_FORMAT).to_string()];
            row.extend(self.columns.iter().map(|c| format!("{:.6}", c[t])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.columns[i].as_slice())
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Row spacing in hours; `None` for a single-row set.
    pub fn dt_hours(&self) -> Option<f64> {
        (self.len() > 1).then(|| (self.timestamps[1] - self.timestamps[0]).num_seconds() as f64 / 3600.0)
    }

    pub fn minute_of_day(&self, t: usize) -> u32 {
        let ts = self.timestamps[t];
        ts.hour() * 60 + ts.minute()
    }

    /// Columns among `names` holding a value outside [0, 1].
    pub fn out_of_unit_range<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        names
            .into_iter()
            .filter(|n| {
                self.column(n)
                    .is_some_and(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
            })
            .map(str::to_string)
            .collect()
    }
}

/// Parameters of the synthetic summer data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub start: NaiveDate,
    pub days: usize,
    pub steps_per_day: usize,
    pub seed: u64,
    /// Every PV/MPV column sees a cloudless sky.
    pub clear_sky: bool,
    pub pv_columns: Vec<String>,
    pub mpv_columns: Vec<String>,
    pub load_columns: Vec<String>,
}

impl SyntheticSpec {
    pub fn summer(days: usize, seed: u64) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2024, 6, 1).expect("valid date"),
            days,
            steps_per_day: 96,
            seed,
            clear_sky: false,
            pv_columns: (0..4).map(|z| format!("pv_z{z}")).collect(),
            mpv_columns: ["mpv_a", "mpv_b", "mpv_c", "mpv_d"].map(String::from).to_vec(),
            load_columns: (1..=10).map(|i| format!("h0_{i}")).collect(),
        }
    }
}

const SUNRISE: f64 = 5.25;
const SUNSET: f64 = 21.5;

fn daylight(hour: f64, shift: f64) -> f64 {
    let (rise, set) = ((SUNRISE + shift).max(SUNRISE), (SUNSET + shift).min(SUNSET));
    if hour <= rise || hour >= set {
        return 0.0;
    }
    (std::f64::consts::PI * (hour - rise) / (set - rise)).sin().powf(1.3)
}

fn household(hour: f64) -> f64 {
    let bump = |c: f64, w: f64, a: f64| a * (-((hour - c) / w).powi(2)).exp();
    0.18 + bump(7.5, 1.2, 0.35) + bump(12.5, 1.5, 0.25) + bump(19.5, 1.8, 0.7)
}

struct Ar1 {
    state: f64,
    rho: f64,
}

impl Ar1 {
    fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.state = self.rho * self.state + (1.0 - self.rho * self.rho).sqrt() * z;
        self.state
    }
}

/// Deterministic synthetic summer profiles.
pub fn synthetic(spec: &SyntheticSpec) -> ProfileSet {
    let n = spec.days * spec.steps_per_day;
    let step_min = (24 * 60 / spec.steps_per_day) as i64;
    let t0 = spec.start.and_hms_opt(0, 0, 0).expect("midnight");
    let timestamps: Vec<NaiveDateTime> = (0..n as i64).map(|k| t0 + Duration::minutes(k * step_min)).collect();
    let hour_of = |k: usize| (k % spec.steps_per_day) as f64 * 24.0 / spec.steps_per_day as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clearness: Vec<f64> = (0..spec.days)
        .map(|_| {
            let u: f64 = rng.random();
            if spec.clear_sky {
                1.0
            } else {
                0.35 + 0.65 * u.sqrt()
            }
        })
        .collect();

    let mut columns = Vec::new();
    let gen_column = |rng: &mut ChaCha8Rng, shift: f64, peak: f64| {
        let mut ar = Ar1 { state: 0.0, rho: 0.85 };
        (0..n)
            .map(|k| {
                let k_d = clearness[k / spec.steps_per_day];
                let z = ar.next(rng);
                let base = peak * daylight(hour_of(k), shift) * k_d;
                (base * (1.0 + 0.25 * (1.0 - k_d) * z)).clamp(0.0, 1.0)
            })
            .collect::<Vec<f64>>()
    };
    for name in &spec.pv_columns {
        columns.push((name.clone(), gen_column(&mut rng, 0.0, 0.9)));
    }
    let mpv_shape = [(-1.0, 0.8), (0.0, 0.9), (1.0, 0.8), (0.5, 0.85)];
    for (i, name) in spec.mpv_columns.iter().enumerate() {
        let (shift, peak) = mpv_shape[i % mpv_shape.len()];
        columns.push((name.clone(), gen_column(&mut rng, shift, peak)));
    }
    for name in &spec.load_columns {
        let factor = 0.7 + 0.6 * rng.random::<f64>();
        let mut ar = Ar1 { state: 0.0, rho: 0.6 };
        let values = (0..n)
            .map(|k| {
                let z = ar.next(&mut rng);
                (factor * household(hour_of(k)) * (1.0 + 0.15 * z)).max(0.05)
            })
            .collect();
        columns.push((name.clone(), values));
    }
    ProfileSet::new(timestamps, columns).expect("synthetic profiles are consistent")
}
