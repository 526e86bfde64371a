use std::f64::consts::{PI, TAU};

use nvgyro::comag::{equivalent_rotation_noise, ComagReading};
use nvgyro::drift::{compensate, startup_gate, thermal_shift, ThermalModel};
use nvgyro::dynamics::{apply_pulse, free_evolve, optical_pump, Channel, DecoherenceParams, PulseSpec, Target};
use nvgyro::harness::{ScenarioSection, Segment, SimConfig};
use nvgyro::protocol::{ramsey_signal_model, recover_rotation, select_working_points, RamseyWorkingPoint};
use nvgyro::spin::{Environment, PhysicalConstants, Rf72Pairing, SpinState};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Pulse(PulseSpec),
    Free { b_z: f64, dt: f64, omega: f64, tau: f64, t2: f64 },
    Pump(f64),
}

fn channel_target() -> impl Strategy<Value = (Channel, Target)> {
    prop_oneof![
        (prop_oneof![Just(Channel::MwMinus), Just(Channel::MwPlus)], -1i8..=1).prop_map(|(c, mi)| (c, Target::Line(mi))),
        prop_oneof![Just(Channel::MwMinus), Just(Channel::MwPlus)].prop_map(|c| (c, Target::AllLines)),
        Just((Channel::Rf5, Target::Manifold(0))),
        prop_oneof![
            Just(Target::BothManifolds),
            Just(Target::Manifold(1)),
            Just(Target::Manifold(-1))
        ]
        .prop_map(|t| (Channel::Rf72, t)),
    ]
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (channel_target(), 0.0..TAU, 0.0..TAU, 0.0..=1.0f64, any::<bool>()).prop_map(|((c, t), angle, phase, f, tr)| {
            let pairing = if tr { Rf72Pairing::Transposed } else { Rf72Pairing::Matched };
            Op::Pulse(PulseSpec::new(c, t, angle).with_phase(phase).with_fidelity(f).with_pairing(pairing))
        }),
        1 => (0.0..2e-3, -5.0..5.0f64, -2.1..2.1f64, 0.0..5e-3, 0.3e-3..5e-3).prop_map(|(b_z, dt, omega, tau, t2)| Op::Free { b_z, dt, omega, tau, t2 }),
        1 => (0.0..=1.0f64).prop_map(Op::Pump),
    ]
}

fn apply(s: &SpinState, op: &Op) -> SpinState {
    let c = PhysicalConstants::default();
    match op {
        Op::Pulse(p) => apply_pulse(s, p).unwrap(),
        Op::Free { b_z, dt, omega, tau, t2 } => {
            let env = Environment { b_z: *b_z, dt: *dt, omega: *omega, t: 0.0 };
            free_evolve(s, &c, &env, *tau, &DecoherenceParams::from_dq(*t2)).unwrap()
        }
        Op::Pump(q) => optical_pump(s, *q).unwrap(),
    }
}

fn working_point() -> RamseyWorkingPoint {
    RamseyWorkingPoint::new(TAU * 7200.0, 0.0, 2e-3, 0.2, -0.02).unwrap()
}

proptest! {
    #[test]
    fn density_matrix_stays_physical(ops in prop::collection::vec(op(), 1..16)) {
        let mut s = SpinState::thermal_nuclear();
        for o in &ops {
            s = apply(&s, o);
        }
        prop_assert!((s.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(s.trace().im.abs() < 1e-12);
        prop_assert!(s.hermiticity_error() < 1e-10);
        prop_assert!(s.eigenvalues().iter().all(|&l| l > -1e-10));
    }

    #[test]
    fn pulses_preserve_purity_at_unit_fidelity((c, t) in channel_target(), angle in 0.0..TAU, phase in 0.0..TAU) {
        let s = SpinState::pure(0, 0);
        let out = apply_pulse(&s, &PulseSpec::new(c, t, angle).with_phase(phase)).unwrap();
        prop_assert!((out.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn working_pair_sits_on_opposite_slopes(f in 500.0..20_000.0f64, phi in -PI..PI, extra in 0.0..5.0f64) {
        let omega0 = TAU * f;
        let target = (1.0 + extra) * TAU / omega0 + 1e-9;
        let (t_n, t_p) = select_working_points(omega0, phi, target).unwrap();
        prop_assert!(t_n <= target + 1e-12 && t_p <= target + 1e-12);
        prop_assert!(t_n > 0.0 && t_p > 0.0);
        prop_assert!(((t_n - t_p).abs() * omega0 - PI).abs() < 1e-9);
        // fringe ∝ cos(ω₀t + φ): slope −sin is −1 at t_n and +1 at t_p
        prop_assert!((omega0 * t_n + phi).sin() > 0.999_999);
        prop_assert!((omega0 * t_p + phi).sin() < -0.999_999);
    }

    #[test]
    fn recovery_is_odd_linear_and_offset_free(x in -0.5..0.5f64, k in -10.0..10.0f64, c in -1.0..1.0f64) {
        let wp = working_point();
        let r = |sp: f64, sn: f64| recover_rotation(sp, sn, &wp).unwrap();
        let base = r(wp.b + x, wp.b - x);
        prop_assert!((r(wp.b - x, wp.b + x) + base).abs() < 1e-9);
        prop_assert!((r(k * x, -k * x) - k * r(x, -x)).abs() < 1e-6 * (1.0 + base.abs() * k.abs()));
        prop_assert!((r(wp.b + x + c, wp.b - x + c) - base).abs() < 1e-6 * (1.0 + base.abs()));
    }

    #[test]
    fn model_round_trip_small_angle(phase in -0.05..0.05f64) {
        let wp = working_point();
        let delta = phase / wp.t_p;
        // a fringe shift of ΔΩ is what the pair inverts
        let got = recover_rotation(
            ramsey_signal_model(&wp, wp.omega0 + delta, wp.t_p),
            ramsey_signal_model(&wp, wp.omega0 + delta, wp.t_n),
            &wp,
        ).unwrap();
        prop_assert!((got - delta).abs() <= 5e-3 * delta.abs() + 1e-12);
    }

    #[test]
    fn field_equivalent_is_linear(a in -1e-6..1e-6f64, b in -1e-6..1e-6f64, k in -100.0..100.0f64) {
        let c = PhysicalConstants::default();
        let f = |x| equivalent_rotation_noise(x, &c);
        prop_assert!((f(a + b) - f(a) - f(b)).abs() < 1e-9);
        prop_assert!((f(k * a) - k * f(a)).abs() < 1e-9 * (1.0 + k.abs()));
    }

    #[test]
    fn compensation_rejects_pure_field(db in -1e-6..1e-6f64, b0 in 1e-4..5e-3f64, rate in -2.1..2.1f64) {
        let c = PhysicalConstants::default();
        let reading = ComagReading { t: 0.0, f_minus: 0.0, f_plus: 0.0, b_est: b0 + db, dt_est: 0.0 };
        let raw = 2.0 * (c.nuclear_larmor(db) + rate);
        let out = compensate(raw, &reading, b0, &c);
        prop_assert!((out - rate).abs() < 1e-8);
    }

    #[test]
    fn thermal_shift_monotone_and_bounded(t in 0.0..2000.0f64, dt in 0.0..100.0f64) {
        let m = ThermalModel::default();
        let a = thermal_shift(&m, t);
        let b = thermal_shift(&m, t + dt);
        prop_assert!(b >= a);
        prop_assert!(a >= 0.0 && b <= m.amplitude);
    }

    #[test]
    fn startup_gate_keeps_exactly_late_records(ts in prop::collection::vec(0.0..400.0f64, 0..50)) {
        let m = ThermalModel::default();
        let recs: Vec<(f64, f64)> = ts.iter().map(|&t| (t, t)).collect();
        let kept = startup_gate(recs.clone(), &m);
        prop_assert_eq!(kept.len(), ts.iter().filter(|&&t| t >= m.discard).count());
        prop_assert!(kept.iter().all(|r| r.0 >= m.discard));
    }

    #[test]
    fn config_round_trips_through_toml(
        seed in any::<u64>(),
        rates in prop::collection::vec(-120.0..=120.0f64, 1..5),
        dur in 0.1..100.0f64,
        photons in 1e3..1e9f64,
    ) {
        let mut cfg = SimConfig { seed, ..SimConfig::default() };
        cfg.readout.photons_per_readout = photons;
        cfg.scenario = ScenarioSection {
            segments: rates.iter().map(|&rate_dps| Segment { duration_s: dur, rate_dps }).collect(),
            ..ScenarioSection::default()
        };
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
