//! Least-squares fitting: ordinary linear regression and a small
//! Levenberg–Marquardt solver for the nonlinear lineshapes used here.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

impl LinearFit {
    /// Two-sided confidence interval on the slope (Student t, n−2 dof).
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let half = self.t_quantile(level) * self.slope_se;
        (self.slope - half, self.slope + half)
    }

    pub fn intercept_ci(&self, level: f64) -> (f64, f64) {
        let half = self.t_quantile(level) * self.intercept_se;
        (self.intercept - half, self.intercept + half)
    }

    fn t_quantile(&self, level: f64) -> f64 {
        let dof = self.n.saturating_sub(2).max(1) as f64;
        StudentsT::new(0.0, 1.0, dof)
            .map(|t| t.inverse_cdf(0.5 + 0.5 * level))
            .unwrap_or(f64::NAN)
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Fit(format!(
            "length mismatch: {} x vs {} y",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all x values identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let (slope_se, intercept_se) = if n > 2 {
        let s2 = sse / (nf - 2.0);
        let se_b = (s2 / sxx).sqrt();
        let se_a = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
        (se_b, se_a)
    } else {
        (0.0, 0.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        slope_se,
        intercept_se,
        n,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop once the relative cost improvement of an accepted step drops below this.
    pub ftol: f64,
    pub lambda0: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-14,
            lambda0: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Standard errors from the final Jacobian (NaN when singular).
    pub std_errors: Vec<f64>,
}

/// Minimises Σ (y − f(x, p))² by Levenberg–Marquardt with a central-difference
/// Jacobian.
pub fn levenberg_marquardt<F>(
    f: F,
    x: &[f64],
    y: &[f64],
    p0: &[f64],
    opts: &LmOptions,
) -> Result<LmResult>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let n = x.len();
    let m = p0.len();
    if n != y.len() {
        return Err(Error::Fit("x and y differ in length".into()));
    }
    if n < m {
        return Err(Error::TooShort { needed: m, got: n });
    }
    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(n, x.iter().zip(y).map(|(&xi, &yi)| yi - f(xi, p)))
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(n, m);
        let mut q = p.to_vec();
        for k in 0..m {
            let h = 1e-6 * (p[k].abs() + p0[k].abs() + 1e-3);
            q[k] = p[k] + h;
            let up: Vec<f64> = x.iter().map(|&xi| f(xi, &q)).collect();
            q[k] = p[k] - h;
            let down: Vec<f64> = x.iter().map(|&xi| f(xi, &q)).collect();
            q[k] = p[k];
            for i in 0..n {
                j[(i, k)] = (up[i] - down[i]) / (2.0 * h);
            }
        }
        j
    };

    let mut p = p0.to_vec();
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residual at start".into()));
    }
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let mut jac = jacobian(&p);
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = residuals(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel < opts.ftol {
                    return finish(p, cost, iterations, &jacobian, n);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
        jac = jacobian(&p);
    }
    finish(p, cost, iterations, &jacobian, n)
}

fn finish<J>(p: Vec<f64>, cost: f64, iterations: usize, jacobian: &J, n: usize) -> Result<LmResult>
where
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let m = p.len();
    let j = jacobian(&p);
    let jtj = j.transpose() * &j;
    let dof = (n.saturating_sub(m)).max(1) as f64;
    let s2 = cost / dof;
    let std_errors = match jtj.try_inverse() {
        Some(inv) => (0..m).map(|k| (inv[(k, k)] * s2).abs().sqrt()).collect(),
        None => vec![f64::NAN; m],
    };
    Ok(LmResult {
        params: p,
        cost,
        iterations,
        std_errors,
    })
}

/// A·e^{−t/T₂}·cos(ωt + φ) + b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayingSinusoid {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    pub phase: f64,
    pub t2: f64,
    pub offset: f64,
}

impl DecayingSinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (-t / self.t2).exp() * (self.omega * t + self.phase).cos() + self.offset
    }

    fn from_params(p: &[f64]) -> Self {
        Self {
            amplitude: p[0],
            omega: p[1],
            phase: p[2],
            t2: 1.0 / p[3],
            offset: p[4],
        }
    }

    /// Flips the sign of a negative amplitude into the phase and wraps the
    /// phase into (−π, π].
    fn normalized(mut self) -> Self {
        if self.amplitude < 0.0 {
            self.amplitude = -self.amplitude;
            self.phase += PI;
        }
        self.phase = wrap_phase(self.phase);
        self
    }
}

pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(TAU);
    if p > PI {
        p -= TAU;
    }
    p
}

/// Peak frequency (Hz) of a uniformly sampled series by zero-padded FFT with
/// parabolic interpolation of the log-magnitude around the peak bin.
pub fn dominant_frequency(y: &[f64], dt: f64, pad_factor: usize) -> Result<f64> {
    if y.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: y.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let n = (y.len() * pad_factor.max(1)).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = y.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let (k, _) = mags
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Fit("empty spectrum".into()))?;
    let mut delta = 0.0;
    if k + 1 < mags.len() {
        let (a, b, c) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom.abs() > 0.0 && denom.is_finite() {
            delta = 0.5 * (a - c) / denom;
        }
    }
    Ok((k as f64 + delta) / (n as f64 * dt))
}

/// Fits a decaying sinusoid to uniformly sampled data. The frequency seed
/// comes from the FFT peak; several phase seeds are tried and the best fit
/// is kept.
pub fn fit_decaying_sinusoid(t: &[f64], y: &[f64]) -> Result<DecayingSinusoid> {
    if t.len() != y.len() {
        return Err(Error::Fit("t and y differ in length".into()));
    }
    if t.len() < 8 {
        return Err(Error::TooShort {
            needed: 8,
            got: t.len(),
        });
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::NonUniform);
    }
    let f0 = dominant_frequency(y, dt, 8)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let amp0 = y
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let span = t[t.len() - 1] - t[0];
    let t0 = t[0];
    // fit in shifted time for conditioning, then shift the phase back
    let ts: Vec<f64> = t.iter().map(|v| v - t0).collect();
    let model = |x: f64, p: &[f64]| p[0] * (-x * p[3]).exp() * (p[1] * x + p[2]).cos() + p[4];
    let mut best: Option<LmResult> = None;
    for k in 0..4 {
        let phase = k as f64 * PI / 2.0;
        let p0 = [amp0, TAU * f0, phase, 1.0 / span, mean];
        let Ok(res) = levenberg_marquardt(model, &ts, y, &p0, &LmOptions::default()) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| res.cost < b.cost) {
            best = Some(res);
        }
    }
    let best = best.ok_or_else(|| Error::Fit("no sinusoid seed converged".into()))?;
    let mut fit = DecayingSinusoid::from_params(&best.params);
    // undo the time shift: cos(ω(t−t0)+φ)e^{−(t−t0)/T2}
    fit.amplitude *= (t0 / fit.t2).exp();
    fit.phase -= fit.omega * t0;
    let fit = fit.normalized();
    if !(fit.t2.is_finite() && fit.omega.is_finite()) {
        return Err(Error::Fit("sinusoid fit diverged".into()));
    }
    Ok(fit)
}

/// A·(1 − e^{−(t−t₀)/τ}) + c with t₀ fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialRise {
    pub amplitude: f64,
    pub tau: f64,
    pub offset: f64,
    pub t0: f64,
}

impl ExponentialRise {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (1.0 - (-(t - self.t0) / self.tau).exp()) + self.offset
    }
}

pub fn fit_exponential_rise(t: &[f64], y: &[f64], t0: f64) -> Result<ExponentialRise> {
    if t.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            got: t.len(),
        });
    }
    let span = t.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - t0;
    let y_first = y[0];
    let y_last = y[y.len() - 1];
    let p0 = [y_last - y_first, span / 4.0, y_first];
    let model = |x: f64, p: &[f64]| p[0] * (1.0 - (-(x - t0) / p[1]).exp()) + p[2];
    let res = levenberg_marquardt(model, t, y, &p0, &LmOptions::default())?;
    let out = ExponentialRise {
        amplitude: res.params[0],
        tau: res.params[1],
        offset: res.params[2],
        t0,
    };
    if !(out.tau > 0.0 && out.tau.is_finite()) {
        return Err(Error::Fit(format!("time constant {} not positive", out.tau)));
    }
    Ok(out)
}
