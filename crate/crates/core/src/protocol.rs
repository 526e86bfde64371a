//! Gyroscope measurement sequences: recursive nuclear polarization,
//! referenced readout, alternating-slope DQ Ramsey and rotation recovery.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_pulse, free_evolve, optical_pump, Channel, DecoherenceParams, PulseSpec, Target,
};
use crate::error::{ensure_finite, Error, Result};
use crate::fit::{fit_decaying_sinusoid, wrap_phase, DecayingSinusoid};
use crate::spin::{Environment, PhysicalConstants, Rf72Pairing, SpinState};

/// (q_preserve, pulse_fidelity) pair that saturates the m_i=0 population at
/// 0.77 after four polarization rounds.
pub const CALIBRATED_Q_PRESERVE: f64 = 0.701_138_490_190_795_8;
pub const CALIBRATED_PULSE_FIDELITY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyWorkingPoint {
    /// DQ beat frequency (rad/s).
    pub omega0: f64,
    pub phi0: f64,
    /// Free-precession time on the negative slope (s).
    pub t_n: f64,
    /// Free-precession time on the positive slope (s).
    pub t_p: f64,
    /// Fringe amplitude in normalized signal units.
    pub a: f64,
    pub b: f64,
}

impl RamseyWorkingPoint {
    pub fn new(omega0: f64, phi0: f64, target: f64, a: f64, b: f64) -> Result<Self> {
        let (t_n, t_p) = select_working_points(omega0, phi0, target)?;
        let wp = Self {
            omega0,
            phi0,
            t_n,
            t_p,
            a,
            b,
        };
        wp.validate()?;
        Ok(wp)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.omega0, "omega0"),
            (self.phi0, "phi0"),
            (self.t_n, "t_n"),
            (self.t_p, "t_p"),
            (self.a, "a"),
            (self.b, "b"),
        ] {
            ensure_finite(v, name)?;
        }
        if self.a <= 0.0 {
            return Err(Error::invalid("a", format!("fringe amplitude {} ≤ 0", self.a)));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::invalid("omega0", "must be > 0"));
        }
        if self.t_n <= 0.0 || self.t_p <= 0.0 {
            return Err(Error::invalid("t_n/t_p", "must be > 0"));
        }
        let off_n = wrap_phase(self.omega0 * self.t_n + self.phi0 - FRAC_PI_2);
        let off_p = wrap_phase(self.omega0 * self.t_p + self.phi0 - 3.0 * FRAC_PI_2);
        if off_n.abs() > 1e-6 || off_p.abs() > 1e-6 {
            return Err(Error::invalid(
                "working point",
                format!("slope phases off by {off_n:.3e} / {off_p:.3e} rad"),
            ));
        }
        Ok(())
    }

    pub fn t_sum(&self) -> f64 {
        self.t_n + self.t_p
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * self.t_sum()
    }

    pub fn period(&self) -> f64 {
        TAU / self.omega0
    }
}

/// Picks the adjacent (negative, positive) slope pair whose later member is
/// the last slope extremum not beyond `target`. Returns `(t_n, t_p)`.
pub fn select_working_points(omega0: f64, phi0: f64, target: f64) -> Result<(f64, f64)> {
    ensure_finite(omega0, "omega0")?;
    ensure_finite(phi0, "phi0")?;
    ensure_finite(target, "target")?;
    if omega0 <= 0.0 {
        return Err(Error::invalid("omega0", "must be > 0"));
    }
    let period = TAU / omega0;
    if target < period {
        return Err(Error::invalid(
            "target",
            format!("{target} s is shorter than one fringe period ({period} s)"),
        ));
    }
    // extrema of the slope sit at phase π/2 + kπ; even k is the negative slope
    let x = (omega0 * target + phi0 - FRAC_PI_2) / PI;
    let k_last = (x + 1e-9).floor() as i64;
    let t_of = |k: i64| (FRAC_PI_2 + k as f64 * PI - phi0) / omega0;
    let (a, b) = (t_of(k_last - 1), t_of(k_last));
    if a <= 0.0 {
        return Err(Error::invalid("target", "no positive working-point pair"));
    }
    if k_last.rem_euclid(2) == 0 {
        Ok((b, a))
    } else {
        Ok((a, b))
    }
}

/// a·cos(ωt + φ₀) + b.
pub fn ramsey_signal_model(wp: &RamseyWorkingPoint, omega: f64, t: f64) -> f64 {
    wp.a * (omega * t + wp.phi0).cos() + wp.b
}

/// Same as [`ramsey_signal_model`] with the oscillating part damped by e^{−t/T₂*}.
pub fn ramsey_signal_model_decaying(wp: &RamseyWorkingPoint, omega: f64, t: f64, t2: f64) -> f64 {
    wp.a * (-t / t2).exp() * (omega * t + wp.phi0).cos() + wp.b
}

/// ΔΩ = (S_p − S_n) / (a·(t_p + t_n)), the small-angle inversion.
pub fn recover_rotation(s_p: f64, s_n: f64, wp: &RamseyWorkingPoint) -> Result<f64> {
    if !(wp.a > 0.0) {
        return Err(Error::invalid("a", format!("fringe amplitude {} ≤ 0", wp.a)));
    }
    let t = wp.t_sum();
    if !(t > 0.0) {
        return Err(Error::invalid("t_p + t_n", "must be > 0"));
    }
    Ok((s_p - s_n) / (wp.a * t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Mean detected photons per readout arm for an m_s=0 electron.
    pub photons_per_readout: f64,
    /// Fractional fluorescence drop for an electron outside m_s=0.
    pub contrast: f64,
    /// Extra background photons per arm (common to both arms).
    pub background: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            photons_per_readout: 1e7,
            contrast: 0.03,
            background: 0.0,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.photons_per_readout > 0.0) || !self.photons_per_readout.is_finite() {
            return Err(Error::NonPhysical(format!(
                "photon budget {} per readout",
                self.photons_per_readout
            )));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1)"));
        }
        if !(self.background >= 0.0) {
            return Err(Error::invalid("background", "must be ≥ 0"));
        }
        Ok(())
    }
}

/// Durations of the sequence elements (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleTiming {
    pub mw_pi: f64,
    pub rf_pi: f64,
    pub pump: f64,
    pub readout: f64,
}

impl Default for CycleTiming {
    fn default() -> Self {
        Self {
            mw_pi: 2e-6,
            rf_pi: 50e-6,
            pump: 10e-6,
            readout: 10e-6,
        }
    }
}

impl CycleTiming {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.mw_pi, "mw_pi"),
            (self.rf_pi, "rf_pi"),
            (self.pump, "pump"),
            (self.readout, "readout"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be a finite duration ≥ 0"));
            }
        }
        Ok(())
    }

    /// Polarization + DQ Ramsey of length `tau` + both readout arms.
    pub fn gyro_duration(&self, n_iter: usize, tau: f64) -> f64 {
        let polarize = n_iter as f64 * (2.0 * self.mw_pi + self.rf_pi + self.pump);
        let ramsey = 2.0 * self.rf_pi + tau;
        let readout = self.rf_pi + 2.0 * (self.mw_pi + self.readout);
        polarize + ramsey + readout
    }
}

/// Everything that defines one gyro shot apart from the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub n_iter: usize,
    pub q_preserve: f64,
    pub mw_fidelity: f64,
    /// Fidelity of every RF π pulse (f₇.₂ and f₅).
    pub rf_fidelity: f64,
    /// MW Rabi frequency; sets how fast transfer falls off with detuning.
    pub mw_rabi_hz: f64,
    pub pairing: Rf72Pairing,
    pub decoherence: DecoherenceParams,
    pub readout: ReadoutConfig,
    pub timing: CycleTiming,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            n_iter: 4,
            q_preserve: CALIBRATED_Q_PRESERVE,
            mw_fidelity: CALIBRATED_PULSE_FIDELITY,
            rf_fidelity: CALIBRATED_PULSE_FIDELITY,
            mw_rabi_hz: 300e3,
            pairing: Rf72Pairing::Matched,
            decoherence: DecoherenceParams::default(),
            readout: ReadoutConfig::default(),
            timing: CycleTiming::default(),
        }
    }
}

impl SequenceConfig {
    /// Perfect gates, perfect pumping, no dephasing.
    pub fn ideal() -> Self {
        Self {
            q_preserve: 1.0,
            mw_fidelity: 1.0,
            rf_fidelity: 1.0,
            decoherence: DecoherenceParams::none(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.q_preserve, "q_preserve"),
            (self.mw_fidelity, "mw_fidelity"),
            (self.rf_fidelity, "rf_fidelity"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [0, 1]")));
            }
        }
        if !(self.mw_rabi_hz > 0.0) {
            return Err(Error::invalid("mw_rabi_hz", "must be > 0"));
        }
        self.decoherence.validate()?;
        self.readout.validate()?;
        self.timing.validate()
    }

    pub fn gyro_duration(&self, tau: f64) -> f64 {
        self.timing.gyro_duration(self.n_iter, tau)
    }

    fn mw_fidelity_at(&self, detuning_hz: f64) -> f64 {
        self.mw_fidelity * mw_transfer_probability(self.mw_rabi_hz, detuning_hz)
    }
}

/// Offset of the applied MW carriers from the true electron lines (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MwDetuning {
    pub minus_hz: f64,
    pub plus_hz: f64,
}

impl MwDetuning {
    pub fn for_manifold(&self, ms: i8) -> f64 {
        if ms < 0 {
            self.minus_hz
        } else {
            self.plus_hz
        }
    }
}

/// Population moved by a nominal π pulse detuned by δ from a two-level
/// resonance with Rabi frequency Ω.
pub fn mw_transfer_probability(rabi_hz: f64, detuning_hz: f64) -> f64 {
    if detuning_hz == 0.0 {
        return 1.0;
    }
    let r = (detuning_hz / rabi_hz).powi(2);
    (FRAC_PI_2 * (1.0 + r).sqrt()).sin().powi(2) / (1.0 + r)
}

/// Repeated MW-conditioned RF transfer into m_i = 0 followed by optical
/// repumping, with the same fidelity for MW and RF pulses.
pub fn polarize_nuclear(
    state: &SpinState,
    n_iter: usize,
    q_preserve: f64,
    pulse_fidelity: f64,
) -> Result<SpinState> {
    let seq = SequenceConfig {
        n_iter,
        q_preserve,
        mw_fidelity: pulse_fidelity,
        rf_fidelity: pulse_fidelity,
        ..SequenceConfig::default()
    };
    polarize_with(state, &seq, MwDetuning::default())
}

pub fn polarize_with(state: &SpinState, seq: &SequenceConfig, detuning: MwDetuning) -> Result<SpinState> {
    seq.validate()?;
    let mut s = state.clone();
    for _ in 0..seq.n_iter {
        // m_i = partner(ms) is routed into manifold ms so that the f₇.₂ pulse
        // in that manifold brings it to m_i = 0
        for ms in [1i8, -1] {
            let mi = seq.pairing.partner(ms);
            let p = PulseSpec::mw_pi(ms, mi).with_fidelity(seq.mw_fidelity_at(detuning.for_manifold(ms)));
            s = apply_pulse(&s, &p)?;
        }
        let rf = PulseSpec::rf72_pi()
            .with_pairing(seq.pairing)
            .with_fidelity(seq.rf_fidelity);
        s = apply_pulse(&s, &rf)?;
        s = optical_pump(&s, seq.q_preserve)?;
    }
    Ok(s)
}

/// m_i=0 population after each polarization round, from the closed
/// recursion p ← q(1−f²)p + qf² + (1−q)/3 starting at ⅓.
pub fn polarization_recursion(n_iter: usize, q_preserve: f64, f: f64) -> Vec<f64> {
    let mut p = 1.0 / 3.0;
    let mut out = vec![p];
    for _ in 0..n_iter {
        p = q_preserve * (1.0 - f * f) * p + q_preserve * f * f + (1.0 - q_preserve) / 3.0;
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutResult {
    /// Referenced signal (arm1 − arm2 transferred population), normalized.
    pub signal: f64,
    /// Single-arm signal: transferred population of arm 1.
    pub unreferenced: f64,
    /// Detected photons (arm 1 unreferenced, arm 2 referenced).
    pub photons: (f64, f64),
}

/// Two-arm readout. Arm 1: selective MW π on the m_i=0 line of m_s=−1, then
/// optical readout. Arm 2: RF5 π in quadrature first, which swaps m_i=0 with
/// the dark DQ state, then the same. The referenced signal is the normalized
/// photon difference; with `rng` the counts are Poisson distributed.
pub fn referenced_readout<R: Rng + ?Sized>(
    state: &SpinState,
    seq: &SequenceConfig,
    detuning: MwDetuning,
    rng: Option<&mut R>,
) -> Result<ReadoutResult> {
    seq.readout.validate()?;
    let mw = PulseSpec::mw_pi(-1, 0).with_fidelity(seq.mw_fidelity_at(detuning.minus_hz));
    let rf = PulseSpec::rf5_pi()
        .with_phase(FRAC_PI_2)
        .with_fidelity(seq.rf_fidelity);
    let transferred = |s: &SpinState| 1.0 - s.electron_populations()[1];
    let arm1 = transferred(&apply_pulse(state, &mw)?);
    let arm2 = transferred(&apply_pulse(&apply_pulse(state, &rf)?, &mw)?);
    let n = seq.readout.photons_per_readout;
    let c = seq.readout.contrast;
    let bg = seq.readout.background;
    let mean1 = n * (1.0 - c * arm1) + bg;
    let mean2 = n * (1.0 - c * arm2) + bg;
    let (f1, f2) = match rng {
        Some(rng) => (poisson(mean1, rng)?, poisson(mean2, rng)?),
        None => (mean1, mean2),
    };
    Ok(ReadoutResult {
        signal: (f2 - f1) / (n * c),
        unreferenced: (n + bg - f1) / (n * c),
        photons: (f1, f2),
    })
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<f64> {
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::NonPhysical(format!("Poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng))
}

/// Thermal nucleus → polarization → first RF5 π: the state that starts free
/// precession.
pub fn prepare_dq_state(seq: &SequenceConfig, detuning: MwDetuning) -> Result<SpinState> {
    let s = polarize_with(&SpinState::thermal_nuclear(), seq, detuning)?;
    apply_pulse(&s, &PulseSpec::rf5_pi().with_fidelity(seq.rf_fidelity))
}

/// Free precession for `tau`, closing RF5 π and referenced readout, starting
/// from a prepared DQ state.
pub fn ramsey_from_prepared<R: Rng + ?Sized>(
    prepared: &SpinState,
    c: &PhysicalConstants,
    env: &Environment,
    seq: &SequenceConfig,
    tau: f64,
    detuning: MwDetuning,
    rng: Option<&mut R>,
) -> Result<ReadoutResult> {
    let s = free_evolve(prepared, c, env, tau, &seq.decoherence)?;
    let s = apply_pulse(&s, &PulseSpec::rf5_pi().with_fidelity(seq.rf_fidelity))?;
    referenced_readout(&s, seq, detuning, rng)
}

pub fn ramsey_shot<R: Rng + ?Sized>(
    c: &PhysicalConstants,
    env: &Environment,
    seq: &SequenceConfig,
    tau: f64,
    detuning: MwDetuning,
    rng: Option<&mut R>,
) -> Result<ReadoutResult> {
    let prepared = prepare_dq_state(seq, detuning)?;
    ramsey_from_prepared(&prepared, c, env, seq, tau, detuning, rng)
}

/// Noise-free referenced signal at each free-precession time.
pub fn ramsey_sweep(
    c: &PhysicalConstants,
    env: &Environment,
    seq: &SequenceConfig,
    taus: &[f64],
) -> Result<Vec<f64>> {
    let prepared = prepare_dq_state(seq, MwDetuning::default())?;
    taus.iter()
        .map(|&tau| {
            ramsey_from_prepared::<rand_chacha::ChaCha8Rng>(
                &prepared,
                c,
                env,
                seq,
                tau,
                MwDetuning::default(),
                None,
            )
            .map(|r| r.signal)
        })
        .collect()
}

/// Evenly spaced τ grid `[0, tau_max]`.
pub fn tau_grid(tau_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && tau_max > 0.0) {
        return Err(Error::invalid("tau grid", "tau_max and step must be > 0"));
    }
    let n = (tau_max / step).round() as usize;
    Ok((0..=n).map(|k| k as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeCalibration {
    pub fit: DecayingSinusoid,
    pub working_point: RamseyWorkingPoint,
}

/// Sweeps τ noise-free in the given environment, fits a decaying sinusoid and
/// places the working pair near `target`. The fringe amplitude is the fitted
/// envelope at the pair midpoint.
pub fn calibrate_fringe(
    c: &PhysicalConstants,
    env: &Environment,
    seq: &SequenceConfig,
    target: f64,
    tau_max: f64,
    step: f64,
) -> Result<FringeCalibration> {
    let taus = tau_grid(tau_max, step)?;
    let signal = ramsey_sweep(c, env, seq, &taus)?;
    let fit = fit_decaying_sinusoid(&taus, &signal)?;
    if !(fit.amplitude > 0.0) {
        return Err(Error::Fit("fringe amplitude vanished".into()));
    }
    let (t_n, t_p) = select_working_points(fit.omega, fit.phase, target)?;
    let mid = 0.5 * (t_n + t_p);
    let working_point = RamseyWorkingPoint {
        omega0: fit.omega,
        phi0: fit.phase,
        t_n,
        t_p,
        a: fit.amplitude * (-mid / fit.t2).exp(),
        b: fit.offset,
    };
    working_point.validate()?;
    Ok(FringeCalibration { fit, working_point })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GyroSample {
    pub t: f64,
    pub s_n: f64,
    pub s_p: f64,
    /// Recovered DQ beat offset (rad/s), twice the rotation in field-free conditions.
    pub delta_omega: f64,
}

/// One negative-slope shot in `env_n` and one positive-slope shot in `env_p`.
pub fn measure_pair<R: Rng + ?Sized>(
    c: &PhysicalConstants,
    seq: &SequenceConfig,
    wp: &RamseyWorkingPoint,
    env_n: &Environment,
    env_p: &Environment,
    detuning: MwDetuning,
    mut rng: Option<&mut R>,
) -> Result<GyroSample> {
    let prepared = prepare_dq_state(seq, detuning)?;
    let s_n = ramsey_from_prepared(&prepared, c, env_n, seq, wp.t_n, detuning, rng.as_deref_mut())?.signal;
    let s_p = ramsey_from_prepared(&prepared, c, env_p, seq, wp.t_p, detuning, rng.as_mut())?.signal;
    Ok(GyroSample {
        t: env_p.t,
        s_n,
        s_p,
        delta_omega: recover_rotation(s_p, s_n, wp)?,
    })
}

/// Alternating-slope measurement over a list of (negative, positive) slope
/// environments; one output per pair.
pub fn run_gyro_cycle<R: Rng + ?Sized>(
    c: &PhysicalConstants,
    seq: &SequenceConfig,
    wp: &RamseyWorkingPoint,
    pairs: &[(Environment, Environment)],
    mut rng: Option<&mut R>,
) -> Result<Vec<GyroSample>> {
    pairs
        .iter()
        .map(|(en, ep)| measure_pair(c, seq, wp, en, ep, MwDetuning::default(), rng.as_deref_mut()))
        .collect()
}

/// Working point for an ideal fringe at field `b_z`: Ω₀ = 2·2πγₙB, φ₀ = 0.
pub fn analytic_working_point(
    c: &PhysicalConstants,
    b_z: f64,
    target: f64,
    a: f64,
    b: f64,
) -> Result<RamseyWorkingPoint> {
    RamseyWorkingPoint::new(c.dq_beat(b_z, 0.0), 0.0, target, a, b)
}

/// Channel/target pair for each protocol pulse, used by diagnostics.
pub fn protocol_pulses(pairing: Rf72Pairing) -> Vec<(Channel, Target)> {
    vec![
        (Channel::MwPlus, Target::Line(pairing.partner(1))),
        (Channel::MwMinus, Target::Line(pairing.partner(-1))),
        (Channel::Rf72, Target::BothManifolds),
        (Channel::Rf5, Target::Manifold(0)),
        (Channel::MwMinus, Target::Line(0)),
    ]
}
