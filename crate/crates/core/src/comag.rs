//! Electron-spin comagnetometer and cothermometer.
//!
//! Both ODMR lines (m_s=0↔−1 and 0↔+1) are probed at once with square-wave
//! frequency modulation at different rates on a shared fluorescence channel.
//! Synchronous half-cycle sorting recovers a dispersion signal per line; an
//! integral loop keeps each probe on its line. Half the line difference gives
//! the field, the line mean gives the temperature.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::spin::{basis_index, secular_gap, Environment, PhysicalConstants, LEVELS};
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrLineshape {
    /// Line centers (Hz).
    pub centers: Vec<f64>,
    /// Full width at half maximum (Hz).
    pub width: f64,
    /// Fractional dip depth of each line.
    pub contrast: f64,
}

impl OdmrLineshape {
    pub fn new(centers: Vec<f64>, width: f64, contrast: f64) -> Result<Self> {
        let l = Self {
            centers,
            width,
            contrast,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::invalid("width", "must be > 0"));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1)"));
        }
        for c in &self.centers {
            ensure_finite(*c, "line center")?;
        }
        Ok(())
    }

    /// Hyperfine triplet of the m_s=0↔`ms` electron line in `env`.
    pub fn triplet(
        c: &PhysicalConstants,
        env: &Environment,
        ms: i8,
        width: f64,
        contrast: f64,
    ) -> Result<Self> {
        c.validate()?;
        env.validate()?;
        let centers = LEVELS
            .iter()
            .map(|&mi| {
                secular_gap(c, env, basis_index(ms, mi), basis_index(0, mi)).abs()
                    / std::f64::consts::TAU
            })
            .collect();
        Self::new(centers, width, contrast)
    }
}

fn lorentzian(detuning: f64, width: f64) -> f64 {
    let x = 2.0 * detuning / width;
    1.0 / (1.0 + x * x)
}

/// Relative fluorescence with one probe tone at `f`.
pub fn odmr_response(l: &OdmrLineshape, f: f64) -> f64 {
    1.0 - l
        .centers
        .iter()
        .map(|c| l.contrast * lorentzian(f - c, l.width))
        .sum::<f64>()
}

/// Depth removed from the fluorescence by a tone at `f`.
fn dip(l: &OdmrLineshape, f: f64) -> f64 {
    1.0 - odmr_response(l, f)
}

/// Difference of the means over the high (+span/2) and low (−span/2)
/// half-cycles of a square-wave modulation starting high at the first sample.
/// Positive when the probe sits above the line.
pub fn fm_demodulate(samples: &TimeSeries, f_mod: f64) -> Result<f64> {
    if !(f_mod > 0.0) {
        return Err(Error::invalid("f_mod", "must be > 0"));
    }
    let dt = samples.sample_interval()?;
    let cycles = samples.len() as f64 * dt * f_mod;
    if (cycles - cycles.round()).abs() > 1e-6 || cycles.round() < 1.0 {
        return Err(Error::NonIntegerCycles { cycles });
    }
    let t0 = samples.t[0];
    let (mut hi, mut lo, mut n_hi, mut n_lo) = (0.0, 0.0, 0usize, 0usize);
    for (t, v) in samples.t.iter().zip(&samples.v) {
        if is_high_half((t - t0) * f_mod) {
            hi += v;
            n_hi += 1;
        } else {
            lo += v;
            n_lo += 1;
        }
    }
    if n_hi == 0 || n_lo == 0 {
        return Err(Error::TooShort {
            needed: 2,
            got: samples.len(),
        });
    }
    Ok(hi / n_hi as f64 - lo / n_lo as f64)
}

fn is_high_half(cycles: f64) -> bool {
    (cycles + 1e-9).fract() < 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComagConfig {
    /// Modulation rate on the m_s=−1 line (Hz).
    pub f_mod_minus: f64,
    /// Modulation rate on the m_s=+1 line (Hz).
    pub f_mod_plus: f64,
    /// Peak-to-peak frequency excursion of the square wave (Hz).
    pub span: f64,
    /// Length of one acquisition window (s).
    pub acquisition: f64,
    pub sample_rate: f64,
    /// Line FWHM (Hz).
    pub width: f64,
    pub contrast: f64,
    /// Integral gain; 1 corrects the full estimated detuning each window.
    pub loop_gain: f64,
    /// Detected photons per fluorescence sample.
    pub photons_per_sample: f64,
    /// Consecutive growing-error windows before the loop is declared diverged.
    pub divergence_steps: usize,
    /// Estimated detunings below this do not count toward divergence (Hz).
    pub divergence_floor: f64,
}

impl Default for ComagConfig {
    fn default() -> Self {
        Self {
            f_mod_minus: 2e3,
            f_mod_plus: 4e3,
            span: 1e6,
            acquisition: 3e-3,
            sample_rate: 96e3,
            width: 1e6,
            contrast: 0.02,
            loop_gain: 1.0,
            photons_per_sample: 1e6,
            divergence_steps: 5,
            divergence_floor: 100e3,
        }
    }
}

impl ComagConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.f_mod_minus, "f_mod_minus"),
            (self.f_mod_plus, "f_mod_plus"),
            (self.span, "span"),
            (self.acquisition, "acquisition"),
            (self.sample_rate, "sample_rate"),
            (self.width, "width"),
            (self.loop_gain, "loop_gain"),
            (self.photons_per_sample, "photons_per_sample"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1)"));
        }
        for f in [self.f_mod_minus, self.f_mod_plus] {
            let cycles = self.acquisition * f;
            if (cycles - cycles.round()).abs() > 1e-6 {
                return Err(Error::NonIntegerCycles { cycles });
            }
            let half = self.sample_rate / (2.0 * f);
            if (half - half.round()).abs() > 1e-6 {
                return Err(Error::invalid(
                    "sample_rate",
                    format!("{half} samples per half-cycle at {f} Hz, expected an integer"),
                ));
            }
        }
        Ok(())
    }

    pub fn samples_per_window(&self) -> usize {
        (self.acquisition * self.sample_rate).round() as usize
    }

    /// Noise-free dispersion of `l` for a probe centered at `f_center`.
    pub fn dispersion(&self, l: &OdmrLineshape, f_center: f64) -> f64 {
        dip(l, f_center - 0.5 * self.span) - dip(l, f_center + 0.5 * self.span)
    }

    /// Slope of the dispersion at the line center (per Hz) for a single line.
    pub fn discriminator_slope(&self) -> f64 {
        self.discriminator_slope_with_sidelines(0.0)
    }

    /// Slope at the central line of a triplet with the given hyperfine
    /// spacing (Hz); a zero spacing means an isolated line.
    pub fn discriminator_slope_with_sidelines(&self, spacing: f64) -> f64 {
        let centers = if spacing == 0.0 {
            vec![0.0]
        } else {
            vec![-spacing.abs(), 0.0, spacing.abs()]
        };
        let l = OdmrLineshape {
            centers,
            width: self.width,
            contrast: self.contrast,
        };
        let h = 1e-3 * self.width;
        (self.dispersion(&l, h) - self.dispersion(&l, -h)) / (2.0 * h)
    }
}

/// Fluorescence samples for one acquisition with the two probe tones
/// square-wave modulated about `probe_minus` and `probe_plus`. Poisson
/// photon noise is added when `rng` is given.
pub fn synthesize_window<R: Rng + ?Sized>(
    cfg: &ComagConfig,
    line_minus: &OdmrLineshape,
    line_plus: &OdmrLineshape,
    probe_minus: f64,
    probe_plus: f64,
    t0: f64,
    rng: Option<&mut R>,
) -> Result<TimeSeries> {
    let n = cfg.samples_per_window();
    let dt = 1.0 / cfg.sample_rate;
    let half = 0.5 * cfg.span;
    let mut values = Vec::with_capacity(n);
    let mut rng = rng;
    for k in 0..n {
        let tk = k as f64 * dt;
        let fm = if is_high_half(tk * cfg.f_mod_minus) {
            probe_minus + half
        } else {
            probe_minus - half
        };
        let fp = if is_high_half(tk * cfg.f_mod_plus) {
            probe_plus + half
        } else {
            probe_plus - half
        };
        let depth = dip(line_minus, fm) + dip(line_plus, fm) + dip(line_minus, fp) + dip(line_plus, fp);
        let r = (1.0 - depth).max(0.0);
        let v = match rng.as_deref_mut() {
            Some(rng) => {
                let mean = cfg.photons_per_sample * r;
                let d = Poisson::new(mean.max(1e-300))
                    .map_err(|e| Error::NonPhysical(format!("Poisson mean {mean}: {e}")))?;
                d.sample(rng) / cfg.photons_per_sample
            }
            None => r,
        };
        values.push(v);
    }
    TimeSeries::uniform("fluorescence", t0, dt, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComagReading {
    /// End of the acquisition window (s).
    pub t: f64,
    pub f_minus: f64,
    pub f_plus: f64,
    pub b_est: f64,
    pub dt_est: f64,
}

/// Field and temperature offset implied by the two tracked line positions.
pub fn extract_field_temperature(f_minus: f64, f_plus: f64, c: &PhysicalConstants) -> (f64, f64) {
    let b = (f_plus - f_minus) / (2.0 * c.gamma_e);
    let dt = (0.5 * (f_plus + f_minus) - c.d) / c.dd_dt;
    (b, dt)
}

/// Integral loop holding both probe tones on their lines.
#[derive(Debug, Clone)]
pub struct ComagTracker {
    cfg: ComagConfig,
    constants: PhysicalConstants,
    slope: f64,
    f_minus: f64,
    f_plus: f64,
    last_error: [f64; 2],
    growing: usize,
}

impl ComagTracker {
    pub fn new(
        cfg: ComagConfig,
        constants: PhysicalConstants,
        f_minus: f64,
        f_plus: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        constants.validate()?;
        ensure_finite(f_minus, "f_minus")?;
        ensure_finite(f_plus, "f_plus")?;
        let slope = cfg.discriminator_slope_with_sidelines(constants.a_par);
        Ok(Self {
            cfg,
            constants,
            slope,
            f_minus,
            f_plus,
            last_error: [0.0; 2],
            growing: 0,
        })
    }

    /// Starts the probes on the central lines of `env`.
    pub fn locked_to(cfg: ComagConfig, constants: PhysicalConstants, env: &Environment) -> Result<Self> {
        let (fm, fp) = central_lines(&constants, env);
        Self::new(cfg, constants, fm, fp)
    }

    pub fn config(&self) -> &ComagConfig {
        &self.cfg
    }

    pub fn probes(&self) -> (f64, f64) {
        (self.f_minus, self.f_plus)
    }

    pub fn reading(&self, t: f64) -> ComagReading {
        let (b_est, dt_est) = extract_field_temperature(self.f_minus, self.f_plus, &self.constants);
        ComagReading {
            t,
            f_minus: self.f_minus,
            f_plus: self.f_plus,
            b_est,
            dt_est,
        }
    }

    /// Demodulates one window of shared-channel fluorescence, updates both
    /// probes and returns the new reading stamped at the window end.
    pub fn track_and_extract(&mut self, samples: &TimeSeries) -> Result<ComagReading> {
        let e_minus = fm_demodulate(samples, self.cfg.f_mod_minus)?;
        let e_plus = fm_demodulate(samples, self.cfg.f_mod_plus)?;
        let est = [e_minus / self.slope, e_plus / self.slope];
        let floor = self.cfg.divergence_floor;
        let grew = est
            .iter()
            .zip(&self.last_error)
            .any(|(now, before)| now.abs() > floor && now.abs() > before.abs());
        self.growing = if grew { self.growing + 1 } else { 0 };
        self.last_error = est;
        if self.growing >= self.cfg.divergence_steps {
            return Err(Error::LoopDivergence {
                steps: self.growing,
            });
        }
        self.f_minus -= self.cfg.loop_gain * est[0];
        self.f_plus -= self.cfg.loop_gain * est[1];
        let t_end = samples.t.last().copied().unwrap_or(0.0) + 1.0 / self.cfg.sample_rate;
        Ok(self.reading(t_end))
    }

    /// Simulates one acquisition against the true lines of `env`.
    pub fn acquire<R: Rng + ?Sized>(
        &mut self,
        env: &Environment,
        t0: f64,
        rng: Option<&mut R>,
    ) -> Result<ComagReading> {
        let lm = OdmrLineshape::triplet(&self.constants, env, -1, self.cfg.width, self.cfg.contrast)?;
        let lp = OdmrLineshape::triplet(&self.constants, env, 1, self.cfg.width, self.cfg.contrast)?;
        let samples = synthesize_window(&self.cfg, &lm, &lp, self.f_minus, self.f_plus, t0, rng)?;
        self.track_and_extract(&samples)
    }
}

/// True m_i=0 electron line frequencies (m_s=−1, m_s=+1) in `env` (Hz).
pub fn central_lines(c: &PhysicalConstants, env: &Environment) -> (f64, f64) {
    let f = |ms: i8| secular_gap(c, env, basis_index(ms, 0), basis_index(0, 0)).abs() / std::f64::consts::TAU;
    (f(-1), f(1))
}

/// Rotation-rate noise (°/s) equivalent to a field noise `db` (T): δB·γₙ·360.
pub fn equivalent_rotation_noise(db: f64, c: &PhysicalConstants) -> f64 {
    db * c.gamma_n * 360.0
}

/// Shot-noise standard deviation of one field reading (T) for a locked loop
/// with unit gain: each line estimate inherits the demodulator noise.
pub fn field_reading_sigma(cfg: &ComagConfig, c: &PhysicalConstants) -> f64 {
    let n = cfg.samples_per_window() as f64;
    // locked probes sit on the line, where r ≈ 1 − 2·contrast·L(span/2)
    let r = 1.0 - 4.0 * cfg.contrast * lorentzian(0.5 * cfg.span, cfg.width);
    let sigma_sample = (r / cfg.photons_per_sample).sqrt();
    let sigma_demod = 2.0 * sigma_sample / n.sqrt();
    let sigma_f = sigma_demod / cfg.discriminator_slope_with_sidelines(c.a_par).abs();
    std::f64::consts::SQRT_2 * sigma_f / (2.0 * c.gamma_e.abs())
}
