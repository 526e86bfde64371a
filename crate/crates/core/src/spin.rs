//! Electron(S=1) ⊗ ¹⁴N nuclear(I=1) ground-state system.
//!
//! Product basis |m_s⟩⊗|m_i⟩ with both quantum numbers ordered −1, 0, +1, so
//! basis index = 3·(m_s+1) + (m_i+1). Constants are stored in Hz (Hz/T, Hz/K)
//! and converted to angular frequency only when a Hamiltonian is built.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{SMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub type Mat3 = SMatrix<Complex64, 3, 3>;
pub type Mat9 = SMatrix<Complex64, 9, 9>;

/// Spin projections in basis order.
pub const LEVELS: [i8; 3] = [-1, 0, 1];

#[inline]
pub fn level_index(m: i8) -> usize {
    debug_assert!((-1..=1).contains(&m));
    (m + 1) as usize
}

#[inline]
pub fn basis_index(ms: i8, mi: i8) -> usize {
    3 * level_index(ms) + level_index(mi)
}

/// (m_s, m_i) for a product-basis index.
#[inline]
pub fn quantum_numbers(index: usize) -> (i8, i8) {
    (LEVELS[index / 3], LEVELS[index % 3])
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// How much of the hyperfine tensor enters the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperfineModel {
    /// A∥·S_z·I_z only.
    #[default]
    Secular,
    /// Adds A⊥·(S_x·I_x + S_y·I_y).
    FullTensor,
}

/// Which nuclear transition in each m_s=±1 manifold is driven at f₇.₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rf72Pairing {
    /// m_s=+1: m_i 0↔+1, m_s=−1: m_i 0↔−1.
    #[default]
    Matched,
    /// m_s=+1: m_i 0↔−1, m_s=−1: m_i 0↔+1.
    Transposed,
}

impl Rf72Pairing {
    /// Nuclear level paired with m_i=0 in electron manifold `ms` (±1).
    pub fn partner(self, ms: i8) -> i8 {
        match self {
            Rf72Pairing::Matched => ms,
            Rf72Pairing::Transposed => -ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Electron zero-field splitting (Hz).
    pub d: f64,
    /// Nuclear quadrupole splitting (Hz).
    pub q: f64,
    /// Axial hyperfine coupling (Hz).
    pub a_par: f64,
    /// Transverse hyperfine coupling (Hz), used only with [`HyperfineModel::FullTensor`].
    pub a_perp: f64,
    /// Electron gyromagnetic ratio (Hz/T).
    pub gamma_e: f64,
    /// ¹⁴N gyromagnetic ratio (Hz/T).
    pub gamma_n: f64,
    /// dD/dT (Hz/K).
    pub dd_dt: f64,
    /// dQ/dT (Hz/K).
    pub dq_dt: f64,
    pub hyperfine: HyperfineModel,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            d: 2.870e9,
            q: -4.945e6,
            a_par: -2.162e6,
            a_perp: -2.70e6,
            gamma_e: 28.024e9,
            gamma_n: 3.077e6,
            dd_dt: -75e3,
            dq_dt: 0.0,
            hyperfine: HyperfineModel::Secular,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.d, "d"),
            (self.q, "q"),
            (self.a_par, "a_par"),
            (self.a_perp, "a_perp"),
            (self.gamma_e, "gamma_e"),
            (self.gamma_n, "gamma_n"),
            (self.dd_dt, "dd_dt"),
            (self.dq_dt, "dq_dt"),
        ] {
            ensure_finite(v, name)?;
        }
        if self.dd_dt == 0.0 {
            return Err(Error::invalid("dd_dt", "must be non-zero"));
        }
        if self.gamma_e == 0.0 {
            return Err(Error::invalid("gamma_e", "must be non-zero"));
        }
        Ok(())
    }

    /// D at temperature offset `dt` (Hz).
    pub fn d_at(&self, dt: f64) -> f64 {
        self.d + self.dd_dt * dt
    }

    /// Q at temperature offset `dt` (Hz).
    pub fn q_at(&self, dt: f64) -> f64 {
        self.q + self.dq_dt * dt
    }

    /// Nuclear precession angular frequency 2π·γn·B (rad/s).
    pub fn nuclear_larmor(&self, b_z: f64) -> f64 {
        TAU * self.gamma_n * b_z
    }

    /// Double-quantum Ramsey beat 2(2π·γn·B + Ω) (rad/s).
    pub fn dq_beat(&self, b_z: f64, omega: f64) -> f64 {
        2.0 * (self.nuclear_larmor(b_z) + omega)
    }

    /// Field that produces a given DQ beat frequency (Hz) with no rotation.
    pub fn field_for_beat(&self, beat_hz: f64) -> f64 {
        beat_hz / (2.0 * self.gamma_n)
    }
}

/// The world the sensor sits in.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Environment {
    /// Field along the NV axis (T).
    pub b_z: f64,
    /// Temperature offset from reference (K).
    pub dt: f64,
    /// Rotation rate about the NV axis (rad/s).
    pub omega: f64,
    /// Wall-clock time (s).
    pub t: f64,
}

impl Environment {
    pub fn with_field(b_z: f64) -> Self {
        Self {
            b_z,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.b_z, "b_z")?;
        ensure_finite(self.dt, "dt")?;
        ensure_finite(self.omega, "omega")?;
        ensure_finite(self.t, "t")?;
        Ok(())
    }
}

fn spin1_3x3() -> (Mat3, Mat3, Mat3) {
    let s2 = std::f64::consts::SQRT_2;
    let mut plus = Mat3::zeros();
    // S₊|m⟩ = √2 |m+1⟩ for m = −1, 0
    plus[(level_index(0), level_index(-1))] = Complex64::new(s2, 0.0);
    plus[(level_index(1), level_index(0))] = Complex64::new(s2, 0.0);
    let minus = plus.adjoint();
    let sx = (plus + minus).scale(0.5);
    let sy = (plus - minus) * Complex64::new(0.0, -0.5);
    let mut sz = Mat3::zeros();
    for m in LEVELS {
        sz[(level_index(m), level_index(m))] = Complex64::new(m as f64, 0.0);
    }
    (sx, sy, sz)
}

fn kron3(a: &Mat3, b: &Mat3) -> Mat9 {
    let mut out = Mat9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..3 {
                for l in 0..3 {
                    out[(3 * i + k, 3 * j + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Electron and nuclear spin-1 operators lifted to the 9-dimensional product space.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: Mat9,
    pub sy: Mat9,
    pub sz: Mat9,
    pub ix: Mat9,
    pub iy: Mat9,
    pub iz: Mat9,
}

pub fn spin1_operators() -> SpinOperators {
    let (x, y, z) = spin1_3x3();
    let id = Mat3::identity();
    SpinOperators {
        sx: kron3(&x, &id),
        sy: kron3(&y, &id),
        sz: kron3(&z, &id),
        ix: kron3(&id, &x),
        iy: kron3(&id, &y),
        iz: kron3(&id, &z),
    }
}

/// Ground-state Hamiltonian in rad/s.
pub fn build_gs_hamiltonian(c: &PhysicalConstants, env: &Environment) -> Result<Mat9> {
    c.validate()?;
    env.validate()?;
    let mut h = Mat9::zeros();
    for idx in 0..9 {
        h[(idx, idx)] = Complex64::new(secular_energy(c, env, idx), 0.0);
    }
    if c.hyperfine == HyperfineModel::FullTensor {
        let ops = spin1_operators();
        let transverse = ops.sx * ops.ix + ops.sy * ops.iy;
        h += transverse.scale(TAU * c.a_perp);
    }
    Ok(h)
}

/// Diagonal (secular) energy of a basis state, rad/s.
pub(crate) fn secular_energy(c: &PhysicalConstants, env: &Environment, idx: usize) -> f64 {
    let (ms, mi) = quantum_numbers(idx);
    let (ms, mi) = (ms as f64, mi as f64);
    TAU * (c.d_at(env.dt) * ms * ms
        + c.gamma_e * env.b_z * ms
        + c.a_par * ms * mi
        + c.q_at(env.dt) * mi * mi
        + c.gamma_n * env.b_z * mi)
        + env.omega * mi
}

/// E_j − E_k of the secular Hamiltonian (rad/s), computed term by term so that
/// contributions common to both levels cancel exactly.
pub(crate) fn secular_gap(c: &PhysicalConstants, env: &Environment, j: usize, k: usize) -> f64 {
    let (msj, mij) = quantum_numbers(j);
    let (msk, mik) = quantum_numbers(k);
    let d_ms2 = (msj * msj - msk * msk) as f64;
    let d_ms = (msj - msk) as f64;
    let d_hf = (msj * mij - msk * mik) as f64;
    let d_mi2 = (mij * mij - mik * mik) as f64;
    let d_mi = (mij - mik) as f64;
    let mut zeeman_n = 0.0;
    if d_mi != 0.0 {
        zeeman_n = d_mi * (TAU * c.gamma_n * env.b_z + env.omega);
    }
    let mut gap = zeeman_n;
    if d_ms2 != 0.0 {
        gap += TAU * c.d_at(env.dt) * d_ms2;
    }
    if d_ms != 0.0 {
        gap += TAU * c.gamma_e * env.b_z * d_ms;
    }
    if d_hf != 0.0 {
        gap += TAU * c.a_par * d_hf;
    }
    if d_mi2 != 0.0 {
        gap += TAU * c.q_at(env.dt) * d_mi2;
    }
    gap
}

/// Level energies in Hz indexed `[ms+1][mi+1]`.
///
/// With the full hyperfine tensor the eigenstates are labelled by their
/// largest overlap with the product basis.
pub fn level_energies(c: &PhysicalConstants, env: &Environment) -> Result<[[f64; 3]; 3]> {
    let h = build_gs_hamiltonian(c, env)?;
    let mut out = [[0.0; 3]; 3];
    match c.hyperfine {
        HyperfineModel::Secular => {
            for idx in 0..9 {
                out[idx / 3][idx % 3] = h[(idx, idx)].re / TAU;
            }
        }
        HyperfineModel::FullTensor => {
            let eig = SymmetricEigen::new(h);
            let mut taken = [false; 9];
            for col in 0..9 {
                let v = eig.eigenvectors.column(col);
                let best = (0..9)
                    .filter(|i| !taken[*i])
                    .max_by(|a, b| v[*a].norm_sqr().total_cmp(&v[*b].norm_sqr()))
                    .ok_or_else(|| Error::Fit("eigenvector labelling failed".into()))?;
                taken[best] = true;
                out[best / 3][best % 3] = eig.eigenvalues[col] / TAU;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    /// m_s = 0 ↔ ±1 at fixed m_i.
    Microwave,
    /// The two m_s=0 nuclear lines addressed together at ≈|Q|.
    F5,
    /// The pair of m_s=±1 nuclear lines addressed together at ≈|Q+A∥|.
    F72,
    /// Other nuclear lines.
    Rf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLine {
    pub label: String,
    pub kind: LineKind,
    pub ms: (i8, i8),
    pub mi: (i8, i8),
    /// Absolute transition frequency (Hz).
    pub freq_hz: f64,
}

fn fmt_m(m: i8) -> String {
    if m > 0 {
        format!("+{m}")
    } else {
        m.to_string()
    }
}

impl TransitionLine {
    pub fn ms_pair(&self) -> String {
        if self.ms.0 == self.ms.1 {
            fmt_m(self.ms.0)
        } else {
            format!("{}<->{}", fmt_m(self.ms.0), fmt_m(self.ms.1))
        }
    }

    pub fn mi_pair(&self) -> String {
        if self.mi.0 == self.mi.1 {
            fmt_m(self.mi.0)
        } else {
            format!("{}<->{}", fmt_m(self.mi.0), fmt_m(self.mi.1))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransitionTable {
    pub lines: Vec<TransitionLine>,
}

impl TransitionTable {
    pub fn of_kind(&self, kind: LineKind) -> impl Iterator<Item = &TransitionLine> {
        self.lines.iter().filter(move |l| l.kind == kind)
    }

    /// The two m_s=0 nuclear frequencies (m_i 0↔−1, 0↔+1).
    pub fn f5(&self) -> [f64; 2] {
        let v: Vec<f64> = self.of_kind(LineKind::F5).map(|l| l.freq_hz).collect();
        [v[0], v[1]]
    }

    /// The f₇.₂ pair (m_s=−1 line first).
    pub fn f72(&self) -> [f64; 2] {
        let v: Vec<f64> = self.of_kind(LineKind::F72).map(|l| l.freq_hz).collect();
        [v[0], v[1]]
    }

    /// MW line for m_s 0↔`ms` at nuclear level `mi`.
    pub fn microwave(&self, ms: i8, mi: i8) -> Option<f64> {
        self.lines
            .iter()
            .find(|l| l.kind == LineKind::Microwave && l.ms == (0, ms) && l.mi == (mi, mi))
            .map(|l| l.freq_hz)
    }
}

pub fn transition_frequencies(c: &PhysicalConstants, env: &Environment) -> Result<TransitionTable> {
    transition_frequencies_with(c, env, Rf72Pairing::Matched)
}

pub fn transition_frequencies_with(
    c: &PhysicalConstants,
    env: &Environment,
    pairing: Rf72Pairing,
) -> Result<TransitionTable> {
    let e = level_energies(c, env)?;
    let en = |ms: i8, mi: i8| e[level_index(ms)][level_index(mi)];
    let mut lines = Vec::with_capacity(12);
    for ms in [-1i8, 1] {
        for mi in LEVELS {
            lines.push(TransitionLine {
                label: format!("mw{}:mi={}", if ms < 0 { "-" } else { "+" }, fmt_m(mi)),
                kind: LineKind::Microwave,
                ms: (0, ms),
                mi: (mi, mi),
                freq_hz: (en(ms, mi) - en(0, mi)).abs(),
            });
        }
    }
    for ms in LEVELS {
        for mi in [-1i8, 1] {
            let kind = match ms {
                0 => LineKind::F5,
                _ if pairing.partner(ms) == mi => LineKind::F72,
                _ => LineKind::Rf,
            };
            let tag = match kind {
                LineKind::F5 => "f5",
                LineKind::F72 => "f7.2",
                _ => "rf",
            };
            lines.push(TransitionLine {
                label: format!("{tag}:ms={}:mi=0<->{}", fmt_m(ms), fmt_m(mi)),
                kind,
                ms: (ms, ms),
                mi: (0, mi),
                freq_hz: (en(ms, mi) - en(ms, 0)).abs(),
            });
        }
    }
    Ok(TransitionTable { lines })
}

/// Density matrix of the electron-nuclear system.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinState {
    rho: Mat9,
}

impl SpinState {
    /// Wraps a matrix after checking the density-matrix invariants.
    pub fn from_matrix(rho: Mat9) -> Result<Self> {
        let s = Self { rho };
        s.validate(1e-9)?;
        Ok(s)
    }

    pub(crate) fn from_matrix_unchecked(rho: Mat9) -> Self {
        Self { rho }
    }

    pub fn pure(ms: i8, mi: i8) -> Self {
        let mut rho = Mat9::zeros();
        let i = basis_index(ms, mi);
        rho[(i, i)] = ONE;
        Self { rho }
    }

    /// Normalised pure state from amplitudes in basis order.
    pub fn from_amplitudes(psi: &[Complex64; 9]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("psi", "zero or non-finite norm"));
        }
        let v = nalgebra::SVector::<Complex64, 9>::from_iterator(psi.iter().map(|c| c / norm));
        Ok(Self {
            rho: v * v.adjoint(),
        })
    }

    /// Diagonal state; `pops[ms+1][mi+1]` are normalised to unit trace.
    pub fn from_populations(pops: [[f64; 3]; 3]) -> Result<Self> {
        let total: f64 = pops.iter().flatten().sum();
        if pops.iter().flatten().any(|p| *p < 0.0 || !p.is_finite()) || total <= 0.0 {
            return Err(Error::invalid("pops", "populations must be finite, non-negative, not all zero"));
        }
        let mut rho = Mat9::zeros();
        for (i, p) in pops.iter().flatten().enumerate() {
            rho[(i, i)] = Complex64::new(p / total, 0.0);
        }
        Ok(Self { rho })
    }

    /// Electron in m_s=0, nuclear spin fully mixed (room-temperature nuclear thermal state).
    pub fn thermal_nuclear() -> Self {
        let mut pops = [[0.0; 3]; 3];
        pops[level_index(0)] = [1.0 / 3.0; 3];
        Self::from_populations(pops).expect("valid populations")
    }

    /// Fully mixed 9-level state.
    pub fn maximally_mixed() -> Self {
        Self {
            rho: Mat9::identity().scale(1.0 / 9.0),
        }
    }

    pub fn matrix(&self) -> &Mat9 {
        &self.rho
    }

    pub fn into_matrix(self) -> Mat9 {
        self.rho
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// max |ρ − ρ†| element-wise.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.rho - self.rho.adjoint();
        d.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> [f64; 9] {
        let herm = (self.rho + self.rho.adjoint()).scale(0.5);
        let eig = SymmetricEigen::new(herm);
        let mut out = [0.0; 9];
        for (o, e) in out.iter_mut().zip(eig.eigenvalues.iter()) {
            *o = *e;
        }
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::NonPhysical(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > tol {
            return Err(Error::NonPhysical(format!("hermiticity error {herm:e}")));
        }
        let min = self.eigenvalues()[0];
        if min < -1e-10_f64.max(tol) {
            return Err(Error::NonPhysical(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn population(&self, ms: i8, mi: i8) -> f64 {
        let i = basis_index(ms, mi);
        self.rho[(i, i)].re
    }

    pub fn populations(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..9 {
            out[i / 3][i % 3] = self.rho[(i, i)].re;
        }
        out
    }

    /// Nuclear populations summed over m_s, indexed by m_i+1.
    pub fn nuclear_populations(&self) -> [f64; 3] {
        let p = self.populations();
        let mut out = [0.0; 3];
        for row in p {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Electron populations summed over m_i, indexed by m_s+1.
    pub fn electron_populations(&self) -> [f64; 3] {
        let p = self.populations();
        [p[0].iter().sum(), p[1].iter().sum(), p[2].iter().sum()]
    }

    pub fn coherence(&self, a: (i8, i8), b: (i8, i8)) -> Complex64 {
        self.rho[(basis_index(a.0, a.1), basis_index(b.0, b.1))]
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalised vector `psi`.
    pub fn overlap(&self, psi: &nalgebra::SVector<Complex64, 9>) -> f64 {
        (psi.adjoint() * self.rho * psi)[(0, 0)].re
    }
}

impl fmt::Display for SpinState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.populations();
        for ms in LEVELS {
            let row = p[level_index(ms)];
            writeln!(
                f,
                "ms={:>2}: {:.6} {:.6} {:.6}",
                ms, row[0], row[1], row[2]
            )?;
        }
        Ok(())
    }
}
