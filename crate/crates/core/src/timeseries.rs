use crate::error::{Error, Result};

/// One named channel of timestamped samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub channel: String,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl TimeSeries {
    pub fn new(channel: impl Into<String>, t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.len() != v.len() {
            return Err(Error::invalid(
                "series",
                format!("{} timestamps but {} values", t.len(), v.len()),
            ));
        }
        if t.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("series sample"));
        }
        if t.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("series", "timestamps decrease"));
        }
        Ok(Self {
            channel: channel.into(),
            t,
            v,
        })
    }

    pub fn uniform(channel: impl Into<String>, t0: f64, dt: f64, v: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        let t = (0..v.len()).map(|k| t0 + k as f64 * dt).collect();
        Self::new(channel, t, v)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.v.is_empty() {
            return f64::NAN;
        }
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.v.len();
        if n < 2 {
            return f64::NAN;
        }
        let m = self.mean();
        (self.v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// Sample interval, requiring uniform spacing to 1e−6 relative.
    pub fn sample_interval(&self) -> Result<f64> {
        let n = self.t.len();
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        let dt = (self.t[n - 1] - self.t[0]) / (n - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::NonUniform);
        }
        let tol = 1e-6 * dt;
        for (k, t) in self.t.iter().enumerate() {
            if (t - (self.t[0] + k as f64 * dt)).abs() > tol.max(1e-12 * t.abs()) {
                return Err(Error::NonUniform);
            }
        }
        Ok(dt)
    }

    pub fn sample_rate(&self) -> Result<f64> {
        Ok(1.0 / self.sample_interval()?)
    }

    /// Samples with `lo <= t < hi`.
    pub fn window(&self, lo: f64, hi: f64) -> TimeSeries {
        let (t, v) = self
            .t
            .iter()
            .zip(&self.v)
            .filter(|(t, _)| **t >= lo && **t < hi)
            .map(|(t, v)| (*t, *v))
            .unzip();
        TimeSeries {
            channel: self.channel.clone(),
            t,
            v,
        }
    }
}
