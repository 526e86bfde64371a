//! Time-domain rotating-frame evolution under a continuous drive.
//!
//! This is the slow cross-check for the gate model: a rectangular pulse is
//! propagated exactly (by diagonalising the time-independent rotating-frame
//! Hamiltonian) with every hyperfine line of the channel driven at once, so
//! off-resonant spectators and Zeeman detunings appear naturally. The secular
//! Hamiltonian is used; relaxation is ignored over the pulse.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::SymmetricEigen;
use num_complex::Complex64;

use super::{Channel, Target};
use crate::error::{ensure_finite, Error, Result};
use crate::spin::{
    basis_index, quantum_numbers, secular_energy, secular_gap, Environment, Mat9,
    PhysicalConstants, Rf72Pairing, SpinState, LEVELS,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub channel: Channel,
    /// Transition the carrier is tuned to.
    pub target: Target,
    /// Rabi frequency on the addressed transition (Hz). For RF5 this is the
    /// |0⟩ ↔ bright-state rate.
    pub rabi_hz: f64,
    pub phase: f64,
    pub pairing: Rf72Pairing,
}

impl Drive {
    pub fn new(channel: Channel, target: Target, rabi_hz: f64) -> Self {
        Self {
            channel,
            target,
            rabi_hz,
            phase: 0.0,
            pairing: Rf72Pairing::Matched,
        }
    }

    /// Duration of a π rotation on the addressed transition (s).
    pub fn pi_duration(&self) -> f64 {
        0.5 / self.rabi_hz
    }

    /// Rabi frequency for which a spectator detuned by `detuning_hz` completes
    /// exactly `k` full cycles during the π pulse, so it ends where it started.
    pub fn synchronized_rabi(detuning_hz: f64, k: u32) -> f64 {
        let k = k as f64;
        detuning_hz.abs() / (4.0 * k * k - 1.0).sqrt()
    }
}

fn idx(ms: i8, mi: i8) -> usize {
    basis_index(ms, mi)
}

/// Carrier angular frequency (rad/s) resonant with the drive target.
pub fn drive_frequency(c: &PhysicalConstants, env: &Environment, drive: &Drive) -> Result<f64> {
    let gap = |a: usize, b: usize| secular_gap(c, env, a, b).abs();
    let unknown = || Error::UnknownTarget {
        channel: drive.channel.to_string(),
        target: drive.target.to_string(),
    };
    let w = match (drive.channel, drive.target) {
        (Channel::MwMinus | Channel::MwPlus, Target::Line(mi)) => {
            let ms = drive.channel.microwave_manifold().unwrap_or_default();
            gap(idx(ms, mi), idx(0, mi))
        }
        (Channel::MwMinus | Channel::MwPlus, Target::AllLines) => {
            let ms = drive.channel.microwave_manifold().unwrap_or_default();
            gap(idx(ms, 0), idx(0, 0))
        }
        (Channel::Rf5, Target::Manifold(0)) => {
            0.5 * (gap(idx(0, 1), idx(0, 0)) + gap(idx(0, -1), idx(0, 0)))
        }
        (Channel::Rf72, Target::Manifold(ms)) if ms != 0 => {
            gap(idx(ms, drive.pairing.partner(ms)), idx(ms, 0))
        }
        (Channel::Rf72, Target::BothManifolds) => {
            0.5 * (gap(idx(1, drive.pairing.partner(1)), idx(1, 0))
                + gap(idx(-1, drive.pairing.partner(-1)), idx(-1, 0)))
        }
        _ => return Err(unknown()),
    };
    Ok(w)
}

/// Rotating-frame Hamiltonian (rad/s) for a drive held at constant amplitude.
pub fn rotating_frame_hamiltonian(
    c: &PhysicalConstants,
    env: &Environment,
    drive: &Drive,
) -> Result<Mat9> {
    ensure_finite(drive.rabi_hz, "rabi_hz")?;
    ensure_finite(drive.phase, "phase")?;
    if drive.rabi_hz <= 0.0 {
        return Err(Error::invalid("rabi_hz", "must be > 0"));
    }
    c.validate()?;
    env.validate()?;
    let wd = drive_frequency(c, env, drive)?;

    // Excitation number per level: +1 on the upper side of the driven
    // transitions (shifted down by ω_d), 0 elsewhere.
    let mut n = [0.0; 9];
    let mut couplings: Vec<(usize, usize, f64)> = Vec::new();
    match drive.channel {
        Channel::MwMinus | Channel::MwPlus => {
            let ms_t = drive.channel.microwave_manifold().unwrap_or_default();
            let upper_is_target = secular_energy(c, env, idx(ms_t, 0)) > secular_energy(c, env, idx(0, 0));
            let omega = TAU * drive.rabi_hz;
            for &mi in &LEVELS {
                let (lo, hi) = if upper_is_target {
                    (idx(0, mi), idx(ms_t, mi))
                } else {
                    (idx(ms_t, mi), idx(0, mi))
                };
                n[hi] = 1.0;
                couplings.push((lo, hi, omega));
            }
        }
        Channel::Rf5 | Channel::Rf72 => {
            // A single RF coil drives every Δm_i = 1 transition with the
            // same spin-1 matrix element; the RF5 rate refers to the
            // collective |0⟩ ↔ bright coupling, √2 times the single-pair rate.
            let omega = match drive.channel {
                Channel::Rf5 => TAU * drive.rabi_hz * FRAC_1_SQRT_2,
                _ => TAU * drive.rabi_hz,
            };
            let zero_upper = c.q_at(env.dt) < 0.0;
            for &ms in &LEVELS {
                for mi in [-1i8, 1] {
                    let (lo, hi) = if zero_upper {
                        (idx(ms, mi), idx(ms, 0))
                    } else {
                        (idx(ms, 0), idx(ms, mi))
                    };
                    n[hi] = 1.0;
                    couplings.push((lo, hi, omega));
                }
            }
        }
    }

    // Energies relative to level 0 so the diagonal stays small where possible.
    let reference = idx(0, 0);
    let mut h = Mat9::zeros();
    for j in 0..9 {
        let e = if j == reference {
            0.0
        } else {
            secular_gap(c, env, j, reference)
        };
        h[(j, j)] = Complex64::new(e - n[j] * wd, 0.0);
    }
    for (lo, hi, omega) in couplings {
        let g = Complex64::from_polar(0.5 * omega, drive.phase);
        h[(hi, lo)] += g;
        h[(lo, hi)] += g.conj();
    }
    Ok(h)
}

/// Propagates `state` for `duration` under the drive, returning the state in
/// the rotating frame (populations are frame independent).
pub fn evolve_driven(
    state: &SpinState,
    c: &PhysicalConstants,
    env: &Environment,
    drive: &Drive,
    duration: f64,
) -> Result<SpinState> {
    ensure_finite(duration, "duration")?;
    if duration < 0.0 {
        return Err(Error::invalid("duration", format!("{duration} < 0")));
    }
    let h = rotating_frame_hamiltonian(c, env, drive)?;
    let eig = SymmetricEigen::new(h);
    let v = eig.eigenvectors;
    let mut phases = Mat9::zeros();
    for (i, e) in eig.eigenvalues.iter().enumerate() {
        phases[(i, i)] = Complex64::from_polar(1.0, -e * duration);
    }
    let u = v * phases * v.adjoint();
    Ok(SpinState::from_matrix_unchecked(
        u * state.matrix() * u.adjoint(),
    ))
}

/// Applies a rectangular π pulse of the given drive.
pub fn pi_pulse(
    state: &SpinState,
    c: &PhysicalConstants,
    env: &Environment,
    drive: &Drive,
) -> Result<SpinState> {
    evolve_driven(state, c, env, drive, drive.pi_duration())
}

/// Nearest spectator detuning (Hz) for the drive target: the smallest gap
/// between the carrier and any other transition the channel couples.
pub fn smallest_spectator_detuning(
    c: &PhysicalConstants,
    env: &Environment,
    drive: &Drive,
) -> Result<f64> {
    let wd = drive_frequency(c, env, drive)?;
    let mut lines = Vec::new();
    match drive.channel {
        Channel::MwMinus | Channel::MwPlus => {
            let ms_t = drive.channel.microwave_manifold().unwrap_or_default();
            for &mi in &LEVELS {
                lines.push(secular_gap(c, env, idx(ms_t, mi), idx(0, mi)).abs());
            }
        }
        Channel::Rf5 | Channel::Rf72 => {
            for &ms in &LEVELS {
                for mi in [-1i8, 1] {
                    lines.push(secular_gap(c, env, idx(ms, mi), idx(ms, 0)).abs());
                }
            }
        }
    }
    // Lines within the addressed set are resonant by construction; the
    // spectators are those more than a nuclear Zeeman splitting away.
    let zeeman = 2.0 * c.nuclear_larmor(env.b_z).abs() + 2.0 * env.omega.abs() + 1e-9;
    lines
        .into_iter()
        .map(|w| (w - wd).abs())
        .filter(|d| *d > zeeman)
        .map(|d| d / TAU)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::NonPhysical("no spectator transitions".into()))
}

/// Largest population difference between two states.
pub fn max_population_difference(a: &SpinState, b: &SpinState) -> f64 {
    (0..9)
        .map(|i| (a.matrix()[(i, i)].re - b.matrix()[(i, i)].re).abs())
        .fold(0.0, f64::max)
}

/// Labels used in diagnostics.
pub fn level_label(i: usize) -> String {
    let (ms, mi) = quantum_numbers(i);
    format!("|ms={ms},mi={mi}⟩")
}
