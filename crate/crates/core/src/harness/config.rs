//! Scenario configuration loaded from TOML.
//!
//! Every section is optional and falls back to the defaults below. Unknown
//! keys are rejected, and both parse and validation errors carry the dotted
//! path of the offending field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comag::ComagConfig;
use crate::drift::ThermalModel;
use crate::dynamics::DecoherenceParams;
use crate::error::{Error, Result};
use crate::protocol::{
    CycleTiming, ReadoutConfig, SequenceConfig, CALIBRATED_PULSE_FIDELITY, CALIBRATED_Q_PRESERVE,
};
use crate::spin::{Environment, PhysicalConstants, Rf72Pairing};

/// Turntable limit on |Ω| (°/s).
pub const MAX_RATE_DPS: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Enables every random source: photon shot noise and the MEMS noise.
    pub shot_noise: bool,
    pub constants: PhysicalConstants,
    pub decoherence: DecoherenceParams,
    pub protocol: ProtocolSection,
    pub readout: ReadoutConfig,
    pub comag: ComagConfig,
    pub thermal: ThermalModel,
    pub drift: DriftSection,
    pub mems: MemsModel,
    pub scenario: ScenarioSection,
    pub analysis: AnalysisSection,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            shot_noise: true,
            constants: PhysicalConstants::default(),
            decoherence: DecoherenceParams::default(),
            protocol: ProtocolSection::default(),
            readout: ReadoutConfig::default(),
            comag: ComagConfig::default(),
            thermal: ThermalModel::default(),
            drift: DriftSection::default(),
            mems: MemsModel::default(),
            scenario: ScenarioSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub n_iter: usize,
    pub q_preserve: f64,
    pub mw_fidelity: f64,
    pub rf_fidelity: f64,
    pub mw_rabi_hz: f64,
    pub pairing: Rf72Pairing,
    /// Free-precession time the working pair is placed below (s).
    pub target_time: f64,
    /// Longest τ of the fringe calibration sweep (s).
    pub calibration_tau_max: f64,
    pub calibration_step: f64,
    pub timing: CycleTiming,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            n_iter: 4,
            q_preserve: CALIBRATED_Q_PRESERVE,
            mw_fidelity: CALIBRATED_PULSE_FIDELITY,
            rf_fidelity: CALIBRATED_PULSE_FIDELITY,
            mw_rabi_hz: 300e3,
            pairing: Rf72Pairing::Matched,
            target_time: 2e-3,
            calibration_tau_max: 5e-3,
            calibration_step: 2e-6,
            timing: CycleTiming::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    /// Subtract the comagnetometer field from the gyro output.
    pub compensation: bool,
    /// Length of the post-discard window whose mean field is the baseline (s).
    pub baseline_window: f64,
    /// Age beyond which a comag reading is flagged stale (s).
    pub staleness: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        Self {
            compensation: true,
            baseline_window: 10.0,
            staleness: 0.05,
        }
    }
}

/// Synthetic reference gyroscope. The defaults are placeholders, not
/// properties of any particular device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemsModel {
    /// Angle random walk (°/√s).
    pub arw: f64,
    /// Standard deviation of the slowly wandering bias (°/s).
    pub bias_instability: f64,
    /// Correlation time of the bias (s).
    pub correlation_time: f64,
    pub sample_rate: f64,
}

impl Default for MemsModel {
    fn default() -> Self {
        Self {
            arw: 0.1,
            bias_instability: 1.0 / 3600.0,
            correlation_time: 100.0,
            sample_rate: 100.0,
        }
    }
}

impl MemsModel {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.arw, "arw"),
            (self.bias_instability, "bias_instability"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and ≥ 0"));
            }
        }
        for (v, name) in [
            (self.correlation_time, "correlation_time"),
            (self.sample_rate, "sample_rate"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: f64,
    pub rate_dps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEvent {
    /// Time from which the offset applies (s).
    pub t_s: f64,
    pub db_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSine {
    pub amplitude_t: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Static bias field along the NV axis (T).
    pub b0_t: f64,
    pub segments: Vec<Segment>,
    pub field_events: Vec<FieldEvent>,
    pub field_sine: Option<FieldSine>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            b0_t: 1.17e-3,
            segments: vec![Segment {
                duration_s: 240.0,
                rate_dps: 0.0,
            }],
            field_events: Vec::new(),
            field_sine: None,
        }
    }
}

impl ScenarioSection {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// Rotation rate (°/s) at time `t`; zero outside the profile.
    pub fn rate_dps(&self, t: f64) -> f64 {
        let mut start = 0.0;
        for s in &self.segments {
            if t >= start && t < start + s.duration_s {
                return s.rate_dps;
            }
            start += s.duration_s;
        }
        0.0
    }

    /// Field (T) at time `t`.
    pub fn field(&self, t: f64) -> f64 {
        let mut b = self.b0_t;
        for e in &self.field_events {
            if t >= e.t_s {
                b += e.db_t;
            }
        }
        if let Some(s) = self.field_sine {
            b += s.amplitude_t * (std::f64::consts::TAU * s.frequency_hz * t).sin();
        }
        b
    }

    /// A profile of equal-length segments at the given rates.
    pub fn stepped(b0_t: f64, step_s: f64, rates_dps: &[f64]) -> Self {
        Self {
            b0_t,
            segments: rates_dps
                .iter()
                .map(|&r| Segment {
                    duration_s: step_s,
                    rate_dps: r,
                })
                .collect(),
            field_events: Vec::new(),
            field_sine: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.b0_t > 0.0) || !self.b0_t.is_finite() {
            return Err(Error::config("scenario.b0_t", "must be finite and > 0"));
        }
        if self.segments.is_empty() {
            return Err(Error::config("scenario.segments", "at least one segment is required"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration_s > 0.0) || !s.duration_s.is_finite() {
                return Err(Error::config(
                    format!("scenario.segments[{i}].duration_s"),
                    "must be finite and > 0",
                ));
            }
            if !s.rate_dps.is_finite() || s.rate_dps.abs() > MAX_RATE_DPS {
                return Err(Error::config(
                    format!("scenario.segments[{i}].rate_dps"),
                    format!("|{}| exceeds {MAX_RATE_DPS} °/s", s.rate_dps),
                ));
            }
        }
        for (i, e) in self.field_events.iter().enumerate() {
            if !e.t_s.is_finite() || !e.db_t.is_finite() {
                return Err(Error::config(
                    format!("scenario.field_events[{i}]"),
                    "values must be finite",
                ));
            }
        }
        if let Some(s) = self.field_sine {
            if !s.amplitude_t.is_finite() || !(s.frequency_hz >= 0.0) {
                return Err(Error::config(
                    "scenario.field_sine",
                    "amplitude must be finite and frequency ≥ 0",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Welch segment length (samples).
    pub segment: usize,
    pub overlap: f64,
    /// Allan τ grid density.
    pub allan_per_decade: usize,
    /// Column of the record CSV analysed by default.
    pub column: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            segment: 1024,
            overlap: 0.5,
            allan_per_decade: 8,
            column: "omega_nv_dps".into(),
        }
    }
}

/// Prefixes section-local validation errors with the section path.
fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("{section}.{name}"), reason),
        Error::NonFinite(what) => Error::config(format!("{section}.{what}"), "must be finite"),
        Error::NonIntegerCycles { cycles } => Error::config(
            format!("{section}.acquisition"),
            format!("covers {cycles:.6} modulation cycles, expected an integer"),
        ),
        Error::NonPhysical(reason) => Error::config(section.to_string(), reason),
        other => other,
    })
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::config(path.as_ref().display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        in_section("constants", self.constants.validate())?;
        in_section("decoherence", self.decoherence.validate())?;
        let seq = self.sequence();
        in_section("protocol", seq.timing.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::config(format!("protocol.timing.{name}"), reason),
            other => other,
        }))?;
        in_section("readout", self.readout.validate())?;
        in_section("protocol", seq.validate())?;
        let p = &self.protocol;
        if !(p.target_time > 0.0) {
            return Err(Error::config("protocol.target_time", "must be > 0"));
        }
        if !(p.calibration_step > 0.0) || !(p.calibration_tau_max > p.target_time) {
            return Err(Error::config(
                "protocol.calibration_tau_max",
                "must exceed target_time with a positive calibration_step",
            ));
        }
        in_section("comag", self.comag.validate())?;
        in_section("thermal", self.thermal.validate())?;
        if self.thermal.amplitude != 0.0 && self.thermal.coefficient_mismatch(&self.constants) > 0.01 {
            return Err(Error::config(
                "thermal.dt_total",
                format!(
                    "amplitude/dt_total = {} Hz/K disagrees with constants.dd_dt = {} Hz/K",
                    self.thermal.amplitude / self.thermal.dt_total,
                    self.constants.dd_dt
                ),
            ));
        }
        let d = &self.drift;
        if !(d.baseline_window > 0.0) {
            return Err(Error::config("drift.baseline_window", "must be > 0"));
        }
        if !(d.staleness > 0.0) {
            return Err(Error::config("drift.staleness", "must be > 0"));
        }
        in_section("mems", self.mems.validate())?;
        self.scenario.validate()?;
        let a = &self.analysis;
        if a.segment < 8 {
            return Err(Error::config("analysis.segment", "must be ≥ 8"));
        }
        if !(0.0..1.0).contains(&a.overlap) {
            return Err(Error::config("analysis.overlap", "must lie in [0, 1)"));
        }
        if a.allan_per_decade == 0 {
            return Err(Error::config("analysis.allan_per_decade", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn sequence(&self) -> SequenceConfig {
        let p = &self.protocol;
        SequenceConfig {
            n_iter: p.n_iter,
            q_preserve: p.q_preserve,
            mw_fidelity: p.mw_fidelity,
            rf_fidelity: p.rf_fidelity,
            mw_rabi_hz: p.mw_rabi_hz,
            pairing: p.pairing,
            decoherence: self.decoherence,
            readout: self.readout,
            timing: p.timing,
        }
    }

    /// True environment at time `t`.
    pub fn environment(&self, t: f64) -> Environment {
        Environment {
            b_z: self.scenario.field(t),
            dt: self.thermal.temperature_offset(t, &self.constants),
            omega: self.scenario.rate_dps(t).to_radians(),
            t,
        }
    }

    /// Noise-free variant with the same physics.
    pub fn noiseless(&self) -> Self {
        Self {
            shot_noise: false,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = SimConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = SimConfig::default();
        cfg.scenario.field_sine = Some(FieldSine {
            amplitude_t: 1e-7,
            frequency_hz: 0.01,
        });
        cfg.scenario.field_events.push(FieldEvent { t_s: 5.0, db_t: 1e-7 });
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = SimConfig::from_toml_str("[comag]\nspam = 1\n").unwrap_err();
        match err {
            Error::Config { path, reason } => {
                assert!(path.starts_with("comag"), "{path}");
                assert!(reason.contains("spam"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = SimConfig::from_toml_str("[readout]\ncontrast = \"high\"\n").unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "readout.contrast"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_report_path() {
        let cases = [
            ("[readout]\ncontrast = 1.5\n", "readout.contrast"),
            ("[protocol]\nq_preserve = 2.0\n", "protocol.q_preserve"),
            ("[comag]\nacquisition = 0.0031\n", "comag.acquisition"),
            (
                "[scenario]\nsegments = [{ duration_s = 1.0, rate_dps = 500.0 }]\n",
                "scenario.segments[0].rate_dps",
            ),
            ("[thermal]\ndt_total = 4.0\n", "thermal.dt_total"),
            ("[protocol.timing]\nrf_pi = -1.0\n", "protocol.timing.rf_pi"),
            ("[decoherence]\nt2_star_dq = 0.0\n", "decoherence.t2_star_dq"),
        ];
        for (text, want) in cases {
            match SimConfig::from_toml_str(text) {
                Err(Error::Config { path, .. }) => assert_eq!(path, want, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn scenario_profile_lookup() {
        let s = ScenarioSection::stepped(1e-3, 2.0, &[0.0, 30.0, -60.0]);
        assert_eq!(s.duration(), 6.0);
        assert_eq!(s.rate_dps(1.0), 0.0);
        assert_eq!(s.rate_dps(2.0), 30.0);
        assert_eq!(s.rate_dps(5.9), -60.0);
        assert_eq!(s.rate_dps(7.0), 0.0);
    }

    #[test]
    fn field_events_and_sine() {
        let mut s = ScenarioSection::stepped(1e-3, 10.0, &[0.0]);
        s.field_events.push(FieldEvent { t_s: 2.0, db_t: 1e-7 });
        assert_eq!(s.field(1.0), 1e-3);
        assert_eq!(s.field(2.0), 1e-3 + 1e-7);
        s.field_sine = Some(FieldSine {
            amplitude_t: 1e-7,
            frequency_hz: 0.25,
        });
        assert!((s.field(1.0) - (1e-3 + 1e-7)).abs() < 1e-18);
    }
}
