//! Shot-noise budgets, spectral density and Allan deviation.

use std::fmt;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::protocol::RamseyWorkingPoint;
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// Mean detected photons per readout arm with no contrast loss.
    pub photons_per_readout: f64,
    /// Fractional fluorescence dip for full transfer out of m_s=0.
    pub contrast: f64,
    /// Time between successive ΔΩ outputs (s).
    pub cycle_time: f64,
    /// Mean population transferred out of m_s=0 per readout arm.
    pub arm_population: f64,
}

impl NoiseBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.photons_per_readout > 0.0) {
            return Err(Error::invalid("photons_per_readout", "must be > 0"));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::invalid("contrast", "must lie in (0, 1)"));
        }
        if !(self.cycle_time > 0.0) {
            return Err(Error::invalid("cycle_time", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.arm_population) {
            return Err(Error::invalid("arm_population", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Standard deviation of one referenced, normalized readout signal.
    pub fn readout_sigma(&self) -> f64 {
        let n = self.photons_per_readout;
        let c = self.contrast;
        (2.0 * (1.0 - c * self.arm_population) / (n * c * c)).sqrt()
    }
}

/// Per-output standard deviation of ΔΩ (rad/s) from photon shot noise.
pub fn shot_noise_sigma(n: &NoiseBudget, wp: &RamseyWorkingPoint) -> Result<f64> {
    n.validate()?;
    wp.validate()?;
    Ok(n.readout_sigma() * std::f64::consts::SQRT_2 / (wp.a * (wp.t_p + wp.t_n)))
}

/// Expected one-sided white-noise ASD of the ΔΩ stream (rad/s/√Hz).
pub fn shot_noise_asd(n: &NoiseBudget, wp: &RamseyWorkingPoint) -> Result<f64> {
    Ok(shot_noise_sigma(n, wp)? * (2.0 * n.cycle_time).sqrt())
}

/// Photon budget that puts the ΔΩ ASD at `target_asd` (rad/s/√Hz).
pub fn photons_for_asd(n: &NoiseBudget, wp: &RamseyWorkingPoint, target_asd: f64) -> Result<f64> {
    if !(target_asd > 0.0) {
        return Err(Error::invalid("target_asd", "must be > 0"));
    }
    let unit = NoiseBudget {
        photons_per_readout: 1.0,
        ..*n
    };
    let asd_one = shot_noise_asd(&unit, wp)?;
    Ok((asd_one / target_asd).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // periodic Hann, the usual choice for spectral averaging
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub frequencies: Vec<f64>,
    /// One-sided amplitude spectral density (unit/√Hz).
    pub asd: Vec<f64>,
    pub segment: usize,
    pub overlap: f64,
    pub window: Window,
    pub averages: usize,
}

impl SpectralEstimate {
    /// RMS-averaged ASD over `lo <= f <= hi`, excluding DC.
    pub fn band_average(&self, lo: f64, hi: f64) -> Result<f64> {
        let psd: Vec<f64> = self
            .frequencies
            .iter()
            .zip(&self.asd)
            .filter(|(f, _)| **f > 0.0 && **f >= lo && **f <= hi)
            .map(|(_, a)| a * a)
            .collect();
        if psd.is_empty() {
            return Err(Error::invalid("band", format!("no bins in [{lo}, {hi}] Hz")));
        }
        Ok((psd.iter().sum::<f64>() / psd.len() as f64).sqrt())
    }

    /// Integral of the PSD over all bins (variance by Parseval).
    pub fn integrated_power(&self) -> f64 {
        let df = if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        };
        self.asd.iter().map(|a| a * a * df).sum()
    }

    pub fn scaled(&self, factor: f64) -> SpectralEstimate {
        SpectralEstimate {
            asd: self.asd.iter().map(|a| a * factor.abs()).collect(),
            ..self.clone()
        }
    }
}

pub fn welch_asd(series: &TimeSeries, segment: usize, overlap: f64) -> Result<SpectralEstimate> {
    welch_asd_with(series, segment, overlap, Window::Hann)
}

/// Welch-averaged periodogram. Each segment is mean-removed, windowed and
/// transformed; the one-sided PSD is 2|X|²/(f_s Σw²) (DC and Nyquist not
/// doubled).
pub fn welch_asd_with(
    series: &TimeSeries,
    segment: usize,
    overlap: f64,
    window: Window,
) -> Result<SpectralEstimate> {
    if segment < 2 {
        return Err(Error::invalid("segment", "must be ≥ 2"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid("overlap", "must lie in [0, 1)"));
    }
    if series.len() < 2 * segment {
        return Err(Error::TooShort {
            needed: 2 * segment,
            got: series.len(),
        });
    }
    let fs = series.sample_rate()?;
    let w = window.coefficients(segment);
    let w2: f64 = w.iter().map(|x| x * x).sum();
    let step = ((segment as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let bins = segment / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut averages = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); segment];
    let mut start = 0;
    while start + segment <= series.len() {
        let chunk = &series.v[start..start + segment];
        let mean = chunk.iter().sum::<f64>() / segment as f64;
        for (slot, (x, wk)) in buf.iter_mut().zip(chunk.iter().zip(&w)) {
            *slot = Complex::new((x - mean) * wk, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        averages += 1;
        start += step;
    }
    let scale = 1.0 / (fs * w2 * averages as f64);
    let asd = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (segment.is_multiple_of(2) && k == segment / 2) {
                1.0
            } else {
                2.0
            };
            (one_sided * p * scale).sqrt()
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 * fs / segment as f64).collect();
    Ok(SpectralEstimate {
        frequencies,
        asd,
        segment,
        overlap,
        window,
        averages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllanPoint {
    pub tau: f64,
    pub adev: f64,
    /// Number of overlapping second differences averaged.
    pub terms: usize,
}

/// Overlapping Allan deviation of a rate series at the requested averaging
/// times. Each τ is rounded to a whole number m of samples; points with
/// fewer than 3 independent bins (N < 3m) are omitted.
pub fn allan_deviation(series: &TimeSeries, taus: &[f64]) -> Result<Vec<AllanPoint>> {
    let dt = series.sample_interval()?;
    let n = series.len();
    let mut phase = Vec::with_capacity(n + 1);
    phase.push(0.0);
    let mut acc = 0.0;
    for v in &series.v {
        acc += v * dt;
        phase.push(acc);
    }
    let mut out = Vec::new();
    let mut last_m = 0;
    for &tau in taus {
        let m = (tau / dt).round() as usize;
        if m == 0 || m == last_m || n < 3 * m {
            continue;
        }
        last_m = m;
        let terms = n + 1 - 2 * m;
        let tau_m = m as f64 * dt;
        let sum: f64 = (0..terms)
            .map(|i| (phase[i + 2 * m] - 2.0 * phase[i + m] + phase[i]).powi(2))
            .sum();
        let avar = sum / (2.0 * tau_m * tau_m * terms as f64);
        out.push(AllanPoint {
            tau: tau_m,
            adev: avar.sqrt(),
            terms,
        });
    }
    Ok(out)
}

/// Logarithmically spaced τ grid from one sample to a third of the record.
pub fn log_tau_grid(dt: f64, n: usize, per_decade: usize) -> Vec<f64> {
    let lo = dt.ln();
    let hi = (dt * (n / 3).max(1) as f64).ln();
    if hi <= lo {
        return vec![dt];
    }
    let steps = (((hi - lo) / std::f64::consts::LN_10) * per_decade as f64).ceil() as usize;
    (0..=steps)
        .map(|k| (lo + (hi - lo) * k as f64 / steps as f64).exp())
        .collect()
}

/// Least-squares slope of log σ versus log τ.
pub fn loglog_slope(points: &[AllanPoint]) -> Result<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.adev > 0.0)
        .map(|p| (p.tau.ln(), p.adev.ln()))
        .unzip();
    linear_fit(&x, &y)
}
