//! Local reactive-power control of inverter-coupled DER following the LV grid
//! code: Q(V) droop with deadband, cos phi(P) characteristic and fixed cos phi.
//!
//! Sign convention (generator oriented): `q > 0` injects reactive power
//! (over-excited, raises voltage), `q < 0` absorbs it (under-excited, lowers
//! voltage).

use serde::{Deserialize, Serialize};
use thiserror::Error;

const RATING_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("active power {p} exceeds inverter rating {s}")]
    InvalidRating { p: f64, s: f64 },
}

/// Q(V) characteristic. Breakpoints in pu, `q_max` in kvar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvCurve {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    #[serde(default = "one")]
    pub v_ref: f64,
    #[serde(default)]
    pub q_max: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for QvCurve {
    fn default() -> Self {
        Self {
            v1: 0.93,
            v2: 0.97,
            v3: 1.03,
            v4: 1.07,
            v_ref: 1.0,
            q_max: 0.0,
        }
    }
}

impl QvCurve {
    pub fn with_q_max(mut self, q_max: f64) -> Self {
        self.q_max = q_max;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.v1 < self.v2 && self.v2 <= self.v3 && self.v3 < self.v4) {
            return Err(format!(
                "need v1 < v2 <= v3 < v4, got ({}, {}, {}, {})",
                self.v1, self.v2, self.v3, self.v4
            ));
        }
        if !(self.v2 <= self.v_ref && self.v_ref <= self.v3) {
            return Err(format!("deadband [{}, {}] must contain v_ref {}", self.v2, self.v3, self.v_ref));
        }
        if self.q_max < 0.0 {
            return Err(format!("q_max must be non-negative, got {}", self.q_max));
        }
        Ok(())
    }
}

/// Reactive power set by the Q(V) droop at bus voltage `v`.
pub fn q_of_v(curve: &QvCurve, v: f64) -> f64 {
    let q = curve.q_max;
    if v <= curve.v1 {
        q
    } else if v < curve.v2 {
        q * (1.0 - (v - curve.v1) / (curve.v2 - curve.v1))
    } else if v <= curve.v3 {
        0.0
    } else if v < curve.v4 {
        -q * (v - curve.v3) / (curve.v4 - curve.v3)
    } else {
        -q
    }
}

/// cos phi(P) characteristic; thresholds in the same unit as the active power
/// passed to [`cosphi_of_p`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosPhiCurve {
    pub p1: f64,
    pub p2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for CosPhiCurve {
    /// Thresholds as fractions of the inverter rating.
    fn default() -> Self {
        Self {
            p1: 0.5,
            p2: 1.0,
            c1: 1.0,
            c2: 0.9,
        }
    }
}

impl CosPhiCurve {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p1 < self.p2) {
            return Err(format!("need p1 < p2, got {} / {}", self.p1, self.p2));
        }
        for c in [self.c1, self.c2] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(format!("power factor {c} outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Curve with thresholds multiplied by `rating` (fractions to kW).
    pub fn scaled(&self, rating: f64) -> Self {
        Self {
            p1: self.p1 * rating,
            p2: self.p2 * rating,
            ..*self
        }
    }
}

pub fn cosphi_of_p(curve: &CosPhiCurve, p: f64) -> f64 {
    if p < curve.p1 {
        curve.c1
    } else if p <= curve.p2 {
        curve.c1 + (p - curve.p1) * (curve.c2 - curve.c1) / (curve.p2 - curve.p1)
    } else {
        curve.c2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Excitation {
    Over,
    #[default]
    Under,
}

impl Excitation {
    pub fn sign(self) -> f64 {
        match self {
            Excitation::Over => 1.0,
            Excitation::Under => -1.0,
        }
    }
}

pub fn q_from_cosphi(p: f64, cosphi: f64, excitation: Excitation) -> f64 {
    excitation.sign() * p * cosphi.acos().tan()
}

/// Clamps a reactive request to the joint PV + BES inverter capability
/// `sqrt(s_pv^2 - p_pv^2) + sqrt(s_bes^2 - p_bes^2)`.
pub fn capability_limit(
    q_request: f64,
    s_pv: f64,
    p_pv: f64,
    s_bes: f64,
    p_bes: f64,
) -> Result<f64, ControlError> {
    let limit = capability(s_pv, p_pv, s_bes, p_bes)?;
    Ok(q_request.clamp(-limit, limit))
}

pub fn capability(s_pv: f64, p_pv: f64, s_bes: f64, p_bes: f64) -> Result<f64, ControlError> {
    let head = |s: f64, p: f64| {
        if p.abs() > s + RATING_EPS {
            Err(ControlError::InvalidRating { p, s })
        } else {
            Ok((s * s - p * p).max(0.0).sqrt())
        }
    };
    Ok(head(s_pv, p_pv)? + head(s_bes, p_bes)?)
}

/// Where the Q(V) curve takes its `q_max` from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QmaxSource {
    /// The instantaneous inverter capability at the current active output.
    #[default]
    Capability,
    /// A fixed kvar value per bus.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode")]
pub enum ControlMode {
    #[default]
    #[serde(rename = "none", alias = "no_control")]
    NoControl,
    #[serde(rename = "qofv")]
    QofV {
        #[serde(default)]
        curve: QvCurve,
        #[serde(default)]
        q_max: QmaxSource,
    },
    /// `curve` thresholds are fractions of the bus DER apparent rating.
    #[serde(rename = "qofp")]
    QofP {
        #[serde(default)]
        curve: CosPhiCurve,
        #[serde(default)]
        excitation: Excitation,
    },
    #[serde(rename = "fixed_cosphi")]
    FixedCosPhi {
        cos_phi: f64,
        #[serde(default)]
        excitation: Excitation,
        /// Active power threshold as a fraction of the rating.
        #[serde(default)]
        p_threshold: f64,
    },
}

impl ControlMode {
    pub fn name(&self) -> &'static str {
        match self {
            ControlMode::NoControl => "none",
            ControlMode::QofV { .. } => "qofv",
            ControlMode::QofP { .. } => "qofp",
            ControlMode::FixedCosPhi { .. } => "fixed_cosphi",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ControlMode::NoControl => Ok(()),
            ControlMode::QofV { curve, q_max } => {
                curve.validate()?;
                if let QmaxSource::Fixed(q) = q_max {
                    if *q < 0.0 {
                        return Err(format!("fixed q_max {q} must be non-negative"));
                    }
                }
                Ok(())
            }
            ControlMode::QofP { curve, .. } => curve.validate(),
            ControlMode::FixedCosPhi { cos_phi, .. } => {
                if *cos_phi > 0.0 && *cos_phi <= 1.0 {
                    Ok(())
                } else {
                    Err(format!("fixed cos phi {cos_phi} outside (0, 1]"))
                }
            }
        }
    }
}

/// Active operating point and ratings of the controllable inverters at one bus.
/// Set `s_bes = p_bes = 0` when the storage does not take part in Q control.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerRatings {
    pub s_pv: f64,
    pub p_pv: f64,
    pub s_bes: f64,
    pub p_bes: f64,
}

impl DerRatings {
    /// Active power fed into the grid by the controlled inverters.
    pub fn feed_in(&self) -> f64 {
        self.p_pv.max(0.0) + self.p_bes.max(0.0)
    }

    pub fn rating(&self) -> f64 {
        self.s_pv + self.s_bes
    }
}

/// Reactive set point (kvar) of the bus DER for the selected mode, clamped to
/// the inverter capability.
pub fn apply_mode(mode: &ControlMode, v_pcc: f64, ratings: &DerRatings) -> Result<f64, ControlError> {
    let cap = capability(ratings.s_pv, ratings.p_pv, ratings.s_bes, ratings.p_bes)?;
    let q = match mode {
        ControlMode::NoControl => return Ok(0.0),
        ControlMode::QofV { curve, q_max } => {
            let q_max = match q_max {
                QmaxSource::Capability => cap,
                QmaxSource::Fixed(q) => *q,
            };
            q_of_v(&curve.with_q_max(q_max), v_pcc)
        }
        ControlMode::QofP { curve, excitation } => {
            let p = ratings.feed_in();
            let c = cosphi_of_p(&curve.scaled(ratings.rating()), p);
            q_from_cosphi(p, c, *excitation)
        }
        ControlMode::FixedCosPhi {
            cos_phi,
            excitation,
            p_threshold,
        } => {
            let p = ratings.feed_in();
            if p > 0.0 && p >= p_threshold * ratings.rating() {
                q_from_cosphi(p, *cos_phi, *excitation)
            } else {
                0.0
            }
        }
    };
    // + 0.0 folds -0.0 into 0.0
    Ok(q.clamp(-cap, cap) + 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> QvCurve {
        QvCurve::default().with_q_max(0.3)
    }

    #[test]
    fn q_of_v_branches() {
        let c = curve();
        assert_eq!(q_of_v(&c, 0.90), 0.3);
        assert_eq!(q_of_v(&c, 0.93), 0.3);
        assert_eq!(q_of_v(&c, 1.0), 0.0);
        assert_eq!(q_of_v(&c, 0.97), 0.0);
        assert_eq!(q_of_v(&c, 1.03), 0.0);
        assert!((q_of_v(&c, 1.05) + 0.15).abs() < 1e-12);
        assert_eq!(q_of_v(&c, 1.2), -0.3);
    }

    #[test]
    fn cosphi_branches() {
        let c = CosPhiCurve {
            p1: 1.0,
            p2: 3.0,
            c1: 1.0,
            c2: 0.9,
        };
        assert_eq!(cosphi_of_p(&c, 0.5), 1.0);
        assert!((cosphi_of_p(&c, 2.0) - 0.95).abs() < 1e-15);
        assert_eq!(cosphi_of_p(&c, 4.0), 0.9);
    }

    #[test]
    fn q_from_cosphi_values() {
        assert_eq!(q_from_cosphi(1.0, 1.0, Excitation::Under), 0.0);
        assert_eq!(q_from_cosphi(0.0, 0.9, Excitation::Under), 0.0);
        let q = q_from_cosphi(0.5, 0.9, Excitation::Under);
        assert!((q + 0.2422).abs() < 5e-5, "{q}");
        assert!(q_from_cosphi(0.5, 0.9, Excitation::Over) > 0.0);
    }

    #[test]
    fn capability_examples() {
        assert!((capability_limit(5.0, 1.0, 0.8, 0.0, 0.0).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(capability_limit(5.0, 1.0, 1.0, 0.0, 0.0).unwrap(), 0.0);
        let q = capability_limit(-5.0, 1.0, 0.8, 0.5, 0.3).unwrap();
        assert!((q + 1.0).abs() < 1e-12);
        assert!(matches!(
            capability_limit(0.0, 1.0, 1.5, 0.0, 0.0),
            Err(ControlError::InvalidRating { .. })
        ));
    }

    #[test]
    fn apply_mode_examples() {
        let r = DerRatings {
            s_pv: 1.2,
            p_pv: 1.0,
            ..Default::default()
        };
        assert_eq!(apply_mode(&ControlMode::NoControl, 1.1, &r).unwrap(), 0.0);
        let qv = ControlMode::QofV {
            curve: QvCurve::default(),
            q_max: QmaxSource::Capability,
        };
        assert_eq!(apply_mode(&qv, 1.0, &r).unwrap(), 0.0);
        let fixed = ControlMode::FixedCosPhi {
            cos_phi: 0.95,
            excitation: Excitation::Under,
            p_threshold: 0.0,
        };
        let q = apply_mode(&fixed, 1.0, &r).unwrap();
        assert!((q + 0.3287).abs() < 5e-5, "{q}");
        let tight = DerRatings {
            s_pv: 1.05,
            p_pv: 1.0,
            ..Default::default()
        };
        let q = apply_mode(&fixed, 1.0, &tight).unwrap();
        assert!((q + (1.05f64.powi(2) - 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn curve_validation() {
        let mut c = QvCurve::default();
        assert!(c.validate().is_ok());
        c.v2 = 1.04;
        assert!(c.validate().is_err());
        assert!(CosPhiCurve { p1: 1.0, p2: 0.5, c1: 1.0, c2: 0.9 }.validate().is_err());
    }
}
