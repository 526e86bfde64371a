//! Gate-level state evolution.
//!
//! Pulses are ideal conditional rotations in two-level subspaces, mixed with
//! the identity channel at weight `1 − fidelity`. Free precession applies the
//! ground-state Hamiltonian phases plus T₂* damping of the nuclear coherences.
//! Optical pumping is an instantaneous map.

pub mod rwa;

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{SVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::spin::{
    basis_index, build_gs_hamiltonian, quantum_numbers, secular_gap, Environment, HyperfineModel,
    Mat9, PhysicalConstants, Rf72Pairing, SpinState, LEVELS,
};

pub type Vec9 = SVector<Complex64, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// m_s 0 ↔ −1 microwave.
    MwMinus,
    /// m_s 0 ↔ +1 microwave.
    MwPlus,
    /// Nuclear drive at ≈|Q| in m_s=0 (the DQ pulse).
    Rf5,
    /// Nuclear drive at ≈|Q+A∥| in m_s=±1.
    Rf72,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::MwMinus => "MW_minus",
            Channel::MwPlus => "MW_plus",
            Channel::Rf5 => "RF5",
            Channel::Rf72 => "RF72",
        };
        f.write_str(s)
    }
}

impl Channel {
    /// Electron manifold reached by a microwave channel.
    pub fn microwave_manifold(self) -> Option<i8> {
        match self {
            Channel::MwMinus => Some(-1),
            Channel::MwPlus => Some(1),
            _ => None,
        }
    }
}

/// Which transition(s) of a channel a pulse addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// Single hyperfine-selected MW line at nuclear level m_i.
    Line(i8),
    /// All three MW hyperfine lines.
    AllLines,
    /// Nuclear transition(s) inside electron manifold m_s.
    Manifold(i8),
    /// f₇.₂ lines in both m_s=±1 manifolds.
    BothManifolds,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = |m: i8| if m > 0 { format!("+{m}") } else { m.to_string() };
        match self {
            Target::Line(m) => write!(f, "mi={}", sign(*m)),
            Target::AllLines => f.write_str("all"),
            Target::Manifold(m) => write!(f, "ms={}", sign(*m)),
            Target::BothManifolds => f.write_str("ms=+-1"),
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse_m = |v: &str| match v {
            "-1" => Some(-1),
            "0" => Some(0),
            "1" | "+1" => Some(1),
            _ => None,
        };
        let unknown = || Error::UnknownTarget {
            channel: "any".into(),
            target: s.to_string(),
        };
        let t = s.trim();
        match t {
            "all" => Ok(Target::AllLines),
            "ms=+-1" | "ms=±1" => Ok(Target::BothManifolds),
            _ => {
                if let Some(v) = t.strip_prefix("mi=") {
                    parse_m(v).map(Target::Line).ok_or_else(unknown)
                } else if let Some(v) = t.strip_prefix("ms=") {
                    parse_m(v).map(Target::Manifold).ok_or_else(unknown)
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub channel: Channel,
    pub target: Target,
    /// Rotation angle (rad); π is a full transfer.
    pub angle: f64,
    /// Carrier phase (rad). For RF5 this selects the addressed superposition
    /// (e^{iφ}|+1⟩ + e^{−iφ}|−1⟩)/√2; for the other channels it sets the
    /// rotation axis.
    pub phase: f64,
    /// Probability that the rotation happens; otherwise the state is untouched.
    pub fidelity: f64,
    pub pairing: Rf72Pairing,
}

impl PulseSpec {
    pub fn new(channel: Channel, target: Target, angle: f64) -> Self {
        Self {
            channel,
            target,
            angle,
            phase: 0.0,
            fidelity: 1.0,
            pairing: Rf72Pairing::Matched,
        }
    }

    /// DQ π pulse: |m_i=0⟩ → bright superposition in m_s=0.
    pub fn rf5_pi() -> Self {
        Self::new(Channel::Rf5, Target::Manifold(0), PI)
    }

    /// Selective MW π on the line (m_s 0↔`ms`, m_i=`mi`).
    pub fn mw_pi(ms: i8, mi: i8) -> Self {
        let channel = if ms < 0 {
            Channel::MwMinus
        } else {
            Channel::MwPlus
        };
        Self::new(channel, Target::Line(mi), PI)
    }

    /// Broadband f₇.₂ π pulse acting in both m_s=±1 manifolds.
    pub fn rf72_pi() -> Self {
        Self::new(Channel::Rf72, Target::BothManifolds, PI)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_fidelity(mut self, fidelity: f64) -> Self {
        self.fidelity = fidelity;
        self
    }

    pub fn with_pairing(mut self, pairing: Rf72Pairing) -> Self {
        self.pairing = pairing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.angle, "angle")?;
        ensure_finite(self.phase, "phase")?;
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::invalid(
                "fidelity",
                format!("{} outside [0, 1]", self.fidelity),
            ));
        }
        Ok(())
    }

    /// Orthonormal (from, to) vector pairs spanning the rotated subspaces.
    pub fn subspaces(&self) -> Result<Vec<(Vec9, Vec9)>> {
        let e = |ms: i8, mi: i8| {
            let mut v = Vec9::zeros();
            v[basis_index(ms, mi)] = Complex64::new(1.0, 0.0);
            v
        };
        let unknown = || Error::UnknownTarget {
            channel: self.channel.to_string(),
            target: self.target.to_string(),
        };
        let pairs = match (self.channel, self.target) {
            (Channel::MwMinus | Channel::MwPlus, Target::Line(mi)) => {
                let ms = self.channel.microwave_manifold().unwrap_or_default();
                vec![(e(0, mi), e(ms, mi))]
            }
            (Channel::MwMinus | Channel::MwPlus, Target::AllLines) => {
                let ms = self.channel.microwave_manifold().unwrap_or_default();
                LEVELS.iter().map(|&mi| (e(0, mi), e(ms, mi))).collect()
            }
            (Channel::Rf5, Target::Manifold(0)) => {
                let plus = Complex64::from_polar(FRAC_1_SQRT_2, self.phase);
                let minus = Complex64::from_polar(FRAC_1_SQRT_2, -self.phase);
                let bright = e(0, 1) * plus + e(0, -1) * minus;
                vec![(e(0, 0), bright)]
            }
            (Channel::Rf72, Target::Manifold(ms)) if ms != 0 => {
                vec![(e(ms, 0), e(ms, self.pairing.partner(ms)))]
            }
            (Channel::Rf72, Target::BothManifolds) => [-1i8, 1]
                .iter()
                .map(|&ms| (e(ms, 0), e(ms, self.pairing.partner(ms))))
                .collect(),
            _ => return Err(unknown()),
        };
        Ok(pairs)
    }

    pub fn unitary(&self) -> Result<Mat9> {
        self.validate()?;
        let half = 0.5 * self.angle;
        let (s, c) = half.sin_cos();
        let axis = match self.channel {
            Channel::Rf5 => 0.0,
            _ => self.phase,
        };
        let minus_i = Complex64::new(0.0, -1.0);
        let mut u = Mat9::identity();
        for (a, b) in self.subspaces()? {
            let proj = a * a.adjoint() + b * b.adjoint();
            let flip = a * b.adjoint() * Complex64::from_polar(1.0, -axis)
                + b * a.adjoint() * Complex64::from_polar(1.0, axis);
            u += proj.scale(c - 1.0) + flip * (minus_i * s);
        }
        Ok(u)
    }
}

pub fn apply_pulse(state: &SpinState, p: &PulseSpec) -> Result<SpinState> {
    let u = p.unitary()?;
    let rho = state.matrix();
    let rotated = u * rho * u.adjoint();
    let f = p.fidelity;
    let mixed = if f == 1.0 {
        rotated
    } else {
        rotated.scale(f) + rho.scale(1.0 - f)
    };
    Ok(SpinState::from_matrix_unchecked(mixed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceParams {
    /// Decay time of the m_i=+1↔−1 coherence (s).
    pub t2_star_dq: f64,
    /// Decay time of the m_i=±1↔0 coherences (s).
    pub t2_star_sq: f64,
}

impl Default for DecoherenceParams {
    fn default() -> Self {
        Self::from_dq(2.37e-3)
    }
}

impl DecoherenceParams {
    /// SQ time set to twice the DQ time.
    pub fn from_dq(t2_star_dq: f64) -> Self {
        Self {
            t2_star_dq,
            t2_star_sq: 2.0 * t2_star_dq,
        }
    }

    pub fn none() -> Self {
        Self {
            t2_star_dq: f64::INFINITY,
            t2_star_sq: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t2_star_dq > 0.0) {
            return Err(Error::invalid("t2_star_dq", "must be > 0"));
        }
        if !(self.t2_star_sq > 0.0) {
            return Err(Error::invalid("t2_star_sq", "must be > 0"));
        }
        Ok(())
    }

    fn factor(&self, delta_mi: i8, tau: f64) -> f64 {
        match delta_mi.abs() {
            0 => 1.0,
            1 => (-tau / self.t2_star_sq).exp(),
            _ => (-tau / self.t2_star_dq).exp(),
        }
    }
}

pub fn free_evolve(
    state: &SpinState,
    c: &PhysicalConstants,
    env: &Environment,
    tau: f64,
    d: &DecoherenceParams,
) -> Result<SpinState> {
    ensure_finite(tau, "tau")?;
    if tau < 0.0 {
        return Err(Error::invalid("tau", format!("{tau} < 0")));
    }
    d.validate()?;
    env.validate()?;
    c.validate()?;
    let mut rho = *state.matrix();
    if tau == 0.0 {
        return Ok(SpinState::from_matrix_unchecked(rho));
    }
    match c.hyperfine {
        HyperfineModel::Secular => {
            for j in 0..9 {
                for k in 0..9 {
                    if j == k {
                        continue;
                    }
                    let phase = -secular_gap(c, env, j, k) * tau;
                    rho[(j, k)] *= Complex64::from_polar(1.0, phase);
                }
            }
        }
        HyperfineModel::FullTensor => {
            let h = build_gs_hamiltonian(c, env)?;
            let eig = SymmetricEigen::new(h);
            let v = eig.eigenvectors;
            let mut phases = Mat9::zeros();
            for (i, e) in eig.eigenvalues.iter().enumerate() {
                phases[(i, i)] = Complex64::from_polar(1.0, -e * tau);
            }
            let u = v * phases * v.adjoint();
            rho = u * rho * u.adjoint();
        }
    }
    for j in 0..9 {
        for k in 0..9 {
            let (_, mij) = quantum_numbers(j);
            let (_, mik) = quantum_numbers(k);
            let f = d.factor(mij - mik, tau);
            if f != 1.0 {
                rho[(j, k)] = rho[(j, k)].scale(f);
            }
        }
    }
    Ok(SpinState::from_matrix_unchecked(rho))
}

/// Resets the electron to m_s=0. Nuclear populations survive with
/// probability `q_preserve` and are otherwise spread uniformly; all
/// coherences are erased.
pub fn optical_pump(state: &SpinState, q_preserve: f64) -> Result<SpinState> {
    if !(0.0..=1.0).contains(&q_preserve) {
        return Err(Error::invalid(
            "q_preserve",
            format!("{q_preserve} outside [0, 1]"),
        ));
    }
    let nuc = state.nuclear_populations();
    let total: f64 = nuc.iter().sum();
    let mut pops = [[0.0; 3]; 3];
    for (slot, p) in pops[1].iter_mut().zip(nuc) {
        *slot = q_preserve * p + (1.0 - q_preserve) * total / 3.0;
    }
    let mut rho = Mat9::zeros();
    for (k, p) in pops[1].iter().enumerate() {
        let idx = basis_index(0, LEVELS[k]);
        rho[(idx, idx)] = Complex64::new(*p, 0.0);
    }
    Ok(SpinState::from_matrix_unchecked(rho))
}
