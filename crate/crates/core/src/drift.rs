//! Thermal transient of the diamond and cross-sensor drift compensation.

use serde::{Deserialize, Serialize};

use crate::comag::ComagReading;
use crate::error::{Error, Result};
use crate::spin::PhysicalConstants;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalModel {
    /// Asymptotic shift of the electron lines (Hz).
    pub amplitude: f64,
    /// Exponential time constant (s).
    pub tau: f64,
    /// Temperature change matching `amplitude` (K).
    pub dt_total: f64,
    /// Startup time excluded from analysis (s).
    pub discard: f64,
}

impl Default for ThermalModel {
    fn default() -> Self {
        Self {
            amplitude: 300e3,
            tau: 54.0,
            dt_total: -4.0,
            discard: 200.0,
        }
    }
}

impl ThermalModel {
    /// No transient and nothing discarded.
    pub fn off() -> Self {
        Self {
            amplitude: 0.0,
            discard: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau", "must be finite and > 0"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::NonFinite("amplitude"));
        }
        if !(self.discard >= 0.0) {
            return Err(Error::invalid("discard", "must be ≥ 0"));
        }
        Ok(())
    }

    /// Relative mismatch between amplitude/dt_total and the constants' dD/dT.
    pub fn coefficient_mismatch(&self, c: &PhysicalConstants) -> f64 {
        if self.dt_total == 0.0 {
            return if self.amplitude == 0.0 { 0.0 } else { f64::INFINITY };
        }
        (self.amplitude / self.dt_total / c.dd_dt - 1.0).abs()
    }

    /// Temperature offset (K) that produces the line shift at time `t`.
    pub fn temperature_offset(&self, t: f64, c: &PhysicalConstants) -> f64 {
        thermal_shift(self, t) / c.dd_dt
    }
}

/// amplitude·(1 − e^{−t/τ}); zero before t = 0.
pub fn thermal_shift(m: &ThermalModel, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    m.amplitude * (-(-t / m.tau).exp_m1())
}

/// Ω_rot = ΔΩ_raw/2 − 2π·γₙ·(B_est − B_baseline).
pub fn compensate(
    delta_omega_raw: f64,
    comag: &ComagReading,
    baseline_b: f64,
    c: &PhysicalConstants,
) -> f64 {
    compensate_field(delta_omega_raw, comag.b_est, baseline_b, c)
}

pub fn compensate_field(delta_omega_raw: f64, b_est: f64, baseline_b: f64, c: &PhysicalConstants) -> f64 {
    0.5 * delta_omega_raw - c.nuclear_larmor(b_est - baseline_b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensated {
    pub omega_rot: f64,
    /// The comag reading used was older than the staleness bound.
    pub stale: bool,
}

/// Applies [`compensate`] with the most recent comag reading, flagging
/// readings older than `staleness`.
#[derive(Debug, Clone)]
pub struct Compensator {
    pub constants: PhysicalConstants,
    pub baseline_b: f64,
    pub staleness: f64,
    last_good: Option<ComagReading>,
}

impl Compensator {
    pub fn new(constants: PhysicalConstants, baseline_b: f64, staleness: f64) -> Self {
        Self {
            constants,
            baseline_b,
            staleness,
            last_good: None,
        }
    }

    pub fn update(&mut self, reading: ComagReading) {
        if reading.b_est.is_finite() && reading.dt_est.is_finite() {
            self.last_good = Some(reading);
        }
    }

    pub fn last_good(&self) -> Option<&ComagReading> {
        self.last_good.as_ref()
    }

    pub fn apply(&self, t: f64, delta_omega_raw: f64) -> Result<Compensated> {
        let r = self
            .last_good
            .ok_or_else(|| Error::NonPhysical("no comagnetometer reading available".into()))?;
        Ok(Compensated {
            omega_rot: compensate(delta_omega_raw, &r, self.baseline_b, &self.constants),
            stale: t - r.t > self.staleness,
        })
    }
}

pub trait Timestamped {
    fn timestamp(&self) -> f64;
}

impl Timestamped for ComagReading {
    fn timestamp(&self) -> f64 {
        self.t
    }
}

impl Timestamped for (f64, f64) {
    fn timestamp(&self) -> f64 {
        self.0
    }
}

/// Drops records with t < discard; the boundary itself is kept.
pub fn startup_gate<T: Timestamped>(records: impl IntoIterator<Item = T>, m: &ThermalModel) -> Vec<T> {
    records
        .into_iter()
        .filter(|r| r.timestamp() >= m.discard)
        .collect()
}

/// Mean field over `[start, start + window)`.
pub fn baseline_field<T: Timestamped>(
    records: &[T],
    field: impl Fn(&T) -> f64,
    start: f64,
    window: f64,
) -> Result<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.timestamp() >= start && r.timestamp() < start + window)
        .map(field)
        .collect();
    if vals.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thermal_shift_examples() {
        let m = ThermalModel::default();
        assert_eq!(thermal_shift(&m, 0.0), 0.0);
        // 300 kHz·(1 − e⁻¹)
        assert_relative_eq!(thermal_shift(&m, 54.0), 189_636.167_648_567, epsilon = 1e-6);
        assert_relative_eq!(thermal_shift(&m, 1e5), 300e3, epsilon = 1e-9);
    }

    #[test]
    fn thermal_consistency_with_default_coefficient() {
        let c = PhysicalConstants::default();
        let m = ThermalModel::default();
        assert!(m.coefficient_mismatch(&c) < 1e-12);
        assert_relative_eq!(m.temperature_offset(1e5, &c), -4.0, epsilon = 1e-9);
    }

    fn reading(t: f64, b: f64) -> ComagReading {
        ComagReading {
            t,
            f_minus: 0.0,
            f_plus: 0.0,
            b_est: b,
            dt_est: 0.0,
        }
    }

    #[test]
    fn compensate_examples() {
        let c = PhysicalConstants::default();
        assert_eq!(compensate(0.0, &reading(0.0, 1e-3), 1e-3, &c), 0.0);
        let db = 100e-9;
        let raw = 2.0 * c.nuclear_larmor(db);
        assert!(compensate(raw, &reading(0.0, 1e-3 + db), 1e-3, &c).abs() < 1e-9);
        let rot = 120f64.to_radians();
        assert_relative_eq!(compensate(2.0 * rot, &reading(0.0, 1e-3), 1e-3, &c), rot, max_relative = 1e-14);
    }

    #[test]
    fn startup_gate_boundary() {
        let m = ThermalModel::default();
        let kept = startup_gate(vec![(199.0, 1.0), (200.0, 2.0), (250.0, 3.0)], &m);
        assert_eq!(kept, vec![(200.0, 2.0), (250.0, 3.0)]);
        assert!(startup_gate(Vec::<(f64, f64)>::new(), &m).is_empty());
    }

    #[test]
    fn compensator_flags_stale_reading() {
        let c = PhysicalConstants::default();
        let mut comp = Compensator::new(c, 1e-3, 0.05);
        assert!(comp.apply(0.0, 1.0).is_err());
        comp.update(reading(1.0, 1e-3));
        assert!(!comp.apply(1.01, 1.0).unwrap().stale);
        let late = comp.apply(1.2, 1.0).unwrap();
        assert!(late.stale);
        assert_relative_eq!(late.omega_rot, 0.5, epsilon = 1e-15);
        comp.update(reading(1.3, f64::NAN));
        assert_eq!(comp.last_good().unwrap().t, 1.0);
    }

    #[test]
    fn baseline_is_window_mean() {
        let recs: Vec<(f64, f64)> = (0..30).map(|k| (k as f64, k as f64)).collect();
        let b = baseline_field(&recs, |r| r.1, 10.0, 10.0).unwrap();
        assert_relative_eq!(b, 14.5, epsilon = 1e-12);
        assert!(baseline_field(&recs, |r| r.1, 100.0, 10.0).is_err());
    }
}
