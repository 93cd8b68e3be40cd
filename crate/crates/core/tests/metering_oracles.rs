use std::f64::consts::{PI, SQRT_2};

use gridmarket::metering::{compare_methods, pq_integration, synthesize, Deviation, HarmonicSpec};
use proptest::prelude::*;

/// Mean of v(t)·i(t) over one 50 Hz cycle by the midpoint rule at 100 kHz,
/// from the closed-form waveforms. Components are (order, rms, phase).
fn oracle_power(v: &[(f64, f64, f64)], i: &[(f64, f64, f64)]) -> f64 {
    let n = 2000;
    let wave = |parts: &[(f64, f64, f64)], t: f64| {
        parts.iter().map(|(h, rms, ph)| SQRT_2 * rms * (h * 2.0 * PI * 50.0 * t + ph).sin()).sum::<f64>()
    };
    (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) / 100_000.0;
            wave(v, t) * wave(i, t)
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn current_harmonic_adds_no_power_against_clean_voltage() {
    let v = synthesize(230.0, 0.0, &HarmonicSpec::none(), 10_000.0, 5).unwrap();
    let i = synthesize(10.0, 0.0, &HarmonicSpec::single(3, 0.3, 0.0), 10_000.0, 5).unwrap();
    let p = pq_integration(&v, &i).unwrap().p;
    let oracle = oracle_power(&[(1.0, 230.0, 0.0)], &[(1.0, 10.0, 0.0), (3.0, 3.0, 0.0)]);
    assert!((oracle - 2300.0).abs() / 2300.0 < 1e-6);
    assert!((p - oracle).abs() / oracle < 1e-3, "{p} vs {oracle}");
}

#[test]
fn total_rms_overstates_by_four_point_four_percent() {
    let v = synthesize(230.0, 0.0, &HarmonicSpec::none(), 10_000.0, 5).unwrap();
    let i = synthesize(10.0, 0.0, &HarmonicSpec::single(3, 0.3, 0.0), 10_000.0, 5).unwrap();
    let c = compare_methods(&v, &i).unwrap();
    assert!((c.i_rms - 109f64.sqrt()).abs() < 1e-3);
    assert!((c.fundamental.p - 2401.3).abs() < 0.5, "{}", c.fundamental.p);
    let oracle_dev =
        230.0 * 109f64.sqrt() / oracle_power(&[(1.0, 230.0, 0.0)], &[(1.0, 10.0, 0.0), (3.0, 3.0, 0.0)]) - 1.0;
    match c.deviation {
        Deviation::Relative(d) => {
            assert!((d - 0.044).abs() <= 0.002, "{d}");
            assert!((d - oracle_dev).abs() < 1e-4);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn shared_harmonic_adds_a_cross_term() {
    let h = HarmonicSpec::single(3, 0.1, 0.4);
    let v = synthesize(230.0, 0.0, &h, 10_000.0, 2).unwrap();
    let i = synthesize(10.0, -0.3, &HarmonicSpec::single(3, 0.3, 0.4), 10_000.0, 2).unwrap();
    let p = pq_integration(&v, &i).unwrap().p;
    let oracle = oracle_power(&[(1.0, 230.0, 0.0), (3.0, 23.0, 0.4)], &[(1.0, 10.0, -0.3), (3.0, 3.0, 0.4)]);
    assert!((p - oracle).abs() / oracle < 1e-3);
    // fundamental-only power misses 23 V × 3 A
    assert!((oracle - 2300.0 * 0.3f64.cos() - 69.0).abs() < 1e-6);
    let c = compare_methods(&v, &i).unwrap();
    assert!((c.fundamental.p - c.v_rms * c.i_rms * 0.3f64.cos()).abs() < 1e-6);
}

proptest! {
    #[test]
    fn pure_tones_match_closed_form(theta in -PI..PI, v_rms in 1.0f64..400.0, i_rms in 0.1f64..50.0) {
        let v = synthesize(v_rms, 0.0, &HarmonicSpec::none(), 10_000.0, 1).unwrap();
        let i = synthesize(i_rms, -theta, &HarmonicSpec::none(), 10_000.0, 1).unwrap();
        let r = pq_integration(&v, &i).unwrap();
        let s = v_rms * i_rms;
        prop_assert!((r.p - s * theta.cos()).abs() <= 1e-3 * s);
        prop_assert!((r.q - s * theta.sin()).abs() <= 1e-3 * s);
        let c = compare_methods(&v, &i).unwrap();
        prop_assert!((c.theta - theta).abs() < 1e-9 || (c.theta - theta).abs() > 2.0 * PI - 1e-9);
    }
}
