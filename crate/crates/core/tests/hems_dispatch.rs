mod common;

use common::dispatch_violations;
use gridmarket::hems::{baseline_cost, solve_schedule, BatterySpec, HemsOptions};
use gridmarket::settlement::Tariff;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (BatterySpec, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (1usize..=24)
        .prop_flat_map(|n| {
            (
                0.0f64..15.0,
                0.5f64..6.0,
                0.5f64..6.0,
                0.8f64..=1.0,
                0.8f64..=1.0,
                0.0f64..=1.0,
                prop::collection::vec(0.0f64..4.0, n),
                prop::collection::vec(0.0f64..6.0, n),
                prop::collection::vec(10.0f64..50.0, n),
                0.0f64..9.9,
            )
        })
        .prop_map(|(cap, mc, md, ec, ed, init, load, pv, tou, fit)| {
            let b = BatterySpec {
                capacity: cap,
                max_charge: mc,
                max_discharge: md,
                efficiency_charge: ec,
                efficiency_discharge: ed,
                soc_init: init * cap,
                soc_min: 0.0,
                soc_max: cap,
            };
            (b, load, pv, tou, fit)
        })
}

/// A feasible but naive schedule: soak up surplus, cover deficits from the
/// battery, trade the rest with the grid.
fn greedy_cost(b: &BatterySpec, load: &[f64], pv: &[f64], tou: &[f64], fit: f64) -> f64 {
    let mut soc = b.soc_init;
    let mut cost = 0.0;
    for t in 0..load.len() {
        let net = pv[t] - load[t];
        if net >= 0.0 {
            let c = net.min(b.max_charge).min((b.soc_max - soc) / b.efficiency_charge).max(0.0);
            soc += c * b.efficiency_charge;
            cost -= (net - c) * fit;
        } else {
            let d = (-net).min(b.max_discharge).min((soc - b.soc_min) * b.efficiency_discharge).max(0.0);
            soc -= d / b.efficiency_discharge;
            cost += (-net - d) * tou[t];
        }
    }
    cost
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn schedules_are_feasible_and_no_worse((b, load, pv, tou, fit) in instance()) {
        let s = solve_schedule(&b, &load, &pv, &tou, fit, &HemsOptions::default()).unwrap();
        let v = dispatch_violations(&s, &b, &load, &pv, 1e-9);
        prop_assert!(v.is_empty(), "{:?}", v);
        let cost = s.cost(&tou, fit);
        prop_assert!(cost <= baseline_cost(&load, &pv, &tou, fit) + 1e-7);
        prop_assert!(cost <= greedy_cost(&b, &load, &pv, &tou, fit) + 1e-7);
        for p in &s.periods {
            prop_assert!(p.grid_import * p.grid_export <= 1e-9);
        }
    }

    #[test]
    fn cost_scales_with_prices((b, load, pv, tou, fit) in instance(), k in 0.1f64..10.0) {
        let base = solve_schedule(&b, &load, &pv, &tou, fit, &HemsOptions::default()).unwrap().cost(&tou, fit);
        let scaled_tou: Vec<f64> = tou.iter().map(|r| r * k).collect();
        let scaled = solve_schedule(&b, &load, &pv, &scaled_tou, fit * k, &HemsOptions::default())
            .unwrap()
            .cost(&scaled_tou, fit * k);
        prop_assert!((scaled - k * base).abs() <= 1e-7 * (1.0 + scaled.abs()));
    }

    #[test]
    fn terminal_soc_is_respected((b, load, pv, tou, fit) in instance()) {
        let opts = HemsOptions { terminal_soc: true };
        let s = solve_schedule(&b, &load, &pv, &tou, fit, &opts).unwrap();
        prop_assert!(dispatch_violations(&s, &b, &load, &pv, 1e-9).is_empty());
        prop_assert!(s.periods.last().unwrap().soc >= b.soc_init - 1e-9);
        let free = solve_schedule(&b, &load, &pv, &tou, fit, &HemsOptions::default()).unwrap();
        prop_assert!(free.cost(&tou, fit) <= s.cost(&tou, fit) + 1e-7);
    }
}

#[test]
fn default_tariff_day_with_battery_beats_baseline() {
    let t = Tariff::default_retail();
    let tou = t.tou_cents();
    let load: Vec<f64> = (0..24).map(|h| if (17..22).contains(&h) { 1.5 } else { 0.4 }).collect();
    let pv: Vec<f64> = (0..24).map(|h| if (9..16).contains(&h) { 2.5 } else { 0.0 }).collect();
    let b = BatterySpec::with_capacity(7.5);
    let s = solve_schedule(&b, &load, &pv, &tou, t.fit.cents(), &HemsOptions::default()).unwrap();
    assert!(dispatch_violations(&s, &b, &load, &pv, 1e-9).is_empty());
    assert!(s.cost(&tou, t.fit.cents()) < baseline_cost(&load, &pv, &tou, t.fit.cents()) - 100.0);
}
