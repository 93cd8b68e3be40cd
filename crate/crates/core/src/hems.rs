//! Household battery scheduling.
//!
//! Each HEMS household solves one LP over the day: choose per-period charge,
//! discharge, grid import and grid export to minimise retail cost
//! `Σ tou_t·import_t − fit·export_t`, with state of charge evolving as
//! `soc_{t+1} = soc_t + η_c·charge_t − discharge_t/η_d`. Market income is not
//! part of the objective.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, LpError, RowKind};

/// Battery parameters. Energies in kWh, power limits in kW (one-hour periods).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub capacity: f64,
    pub max_charge: f64,
    pub max_discharge: f64,
    pub efficiency_charge: f64,
    pub efficiency_discharge: f64,
    pub soc_init: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

impl BatterySpec {
    /// 5 kW limits, 95 % one-way efficiency, half full, usable down to empty.
    pub fn with_capacity(capacity: f64) -> Self {
        BatterySpec {
            capacity,
            max_charge: 5.0,
            max_discharge: 5.0,
            efficiency_charge: 0.95,
            efficiency_discharge: 0.95,
            soc_init: 0.5 * capacity,
            soc_min: 0.0,
            soc_max: capacity,
        }
    }

    pub fn none() -> Self {
        Self::with_capacity(0.0)
    }

    pub fn validate(&self) -> Result<(), HemsError> {
        let bad = |what: &'static str| Err(HemsError::InvalidBattery(what));
        let all = [
            self.capacity,
            self.max_charge,
            self.max_discharge,
            self.efficiency_charge,
            self.efficiency_discharge,
            self.soc_init,
            self.soc_min,
            self.soc_max,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.max_charge < 0.0 || self.max_discharge < 0.0 {
            return bad("negative power limit");
        }
        if !(self.efficiency_charge > 0.0 && self.efficiency_charge <= 1.0)
            || !(self.efficiency_discharge > 0.0 && self.efficiency_discharge <= 1.0)
        {
            return bad("efficiency outside (0, 1]");
        }
        if !(0.0 <= self.soc_min
            && self.soc_min <= self.soc_init
            && self.soc_init <= self.soc_max
            && self.soc_max <= self.capacity)
        {
            return bad("require 0 ≤ soc_min ≤ soc_init ≤ soc_max ≤ capacity");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HemsOptions {
    /// Require the battery to end the day at least as full as it started.
    pub terminal_soc: bool,
}

/// One period of a schedule, kWh. `soc` is the state of charge at the end of the period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodDispatch {
    pub charge: f64,
    pub discharge: f64,
    pub grid_import: f64,
    pub grid_export: f64,
    pub soc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchSchedule {
    pub soc_init: f64,
    pub periods: Vec<PeriodDispatch>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HemsError {
    #[error("invalid battery: {0}")]
    InvalidBattery(&'static str),
    #[error("forecast lengths differ: load {load}, pv {pv}, tou {tou}")]
    HorizonMismatch { load: usize, pv: usize, tou: usize },
    #[error("{series} forecast invalid at period {period}: {value}")]
    BadForecast { series: &'static str, period: usize, value: f64 },
    #[error("feed-in rate {fit} c/kWh must be below every retail rate (min {min_tou} c/kWh)")]
    FitNotBelowTou { fit: f64, min_tou: f64 },
    #[error("dispatch LP failed")]
    Solver(#[from] LpError),
}

impl DispatchSchedule {
    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    /// Retail cost in cents under `tou` and `fit`.
    pub fn cost(&self, tou: &[f64], fit: f64) -> f64 {
        self.periods.iter().zip(tou).map(|(p, rate)| rate * p.grid_import - fit * p.grid_export).sum()
    }

    /// Signed tradable energy per period: export positive, import negative.
    pub fn surplus_deficit(&self) -> Vec<f64> {
        self.periods.iter().map(|p| p.grid_export - p.grid_import).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,charge,discharge,import,export,soc")?;
        for (t, p) in self.periods.iter().enumerate() {
            writeln!(
                w,
                "{t},{:.6},{:.6},{:.6},{:.6},{:.6}",
                p.charge, p.discharge, p.grid_import, p.grid_export, p.soc
            )?;
        }
        Ok(())
    }
}

/// Cost of buying every load and selling every PV kWh at retail, in cents.
pub fn baseline_cost(load: &[f64], pv: &[f64], tou: &[f64], fit: f64) -> f64 {
    load.iter()
        .zip(pv)
        .zip(tou)
        .map(|((l, p), rate)| {
            let net = l - p;
            if net > 0.0 {
                rate * net
            } else {
                fit * net
            }
        })
        .sum()
}

const CHARGE: usize = 0;
const DISCHARGE: usize = 1;
const IMPORT: usize = 2;
const EXPORT: usize = 3;
const SOC: usize = 4;

pub fn solve_schedule(
    battery: &BatterySpec,
    load: &[f64],
    pv: &[f64],
    tou: &[f64],
    fit: f64,
    options: &HemsOptions,
) -> Result<DispatchSchedule, HemsError> {
    battery.validate()?;
    let horizon = load.len();
    if pv.len() != horizon || tou.len() != horizon {
        return Err(HemsError::HorizonMismatch { load: horizon, pv: pv.len(), tou: tou.len() });
    }
    for (series, values) in [("load", load), ("pv", pv), ("tou", tou)] {
        if let Some((period, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(HemsError::BadForecast { series, period, value });
        }
    }
    if !fit.is_finite() || fit < 0.0 {
        return Err(HemsError::BadForecast { series: "fit", period: 0, value: fit });
    }
    let min_tou = tou.iter().copied().fold(f64::INFINITY, f64::min);
    if horizon > 0 && fit >= min_tou {
        return Err(HemsError::FitNotBelowTou { fit, min_tou });
    }

    // variable layout: kind * horizon + t; SOC is stored relative to soc_min
    let var = |kind: usize, t: usize| kind * horizon + t;
    let mut lp = LinearProgram::new(5 * horizon);
    let span = battery.soc_max - battery.soc_min;
    let start = battery.soc_init - battery.soc_min;
    for t in 0..horizon {
        lp.set_cost(var(IMPORT, t), tou[t]);
        lp.set_cost(var(EXPORT, t), -fit);
        lp.add_row(
            "energy balance",
            vec![(var(IMPORT, t), 1.0), (var(EXPORT, t), -1.0), (var(CHARGE, t), -1.0), (var(DISCHARGE, t), 1.0)],
            RowKind::Eq,
            load[t] - pv[t],
        );
        let mut dynamics = vec![
            (var(SOC, t), 1.0),
            (var(CHARGE, t), -battery.efficiency_charge),
            (var(DISCHARGE, t), 1.0 / battery.efficiency_discharge),
        ];
        let rhs = if t == 0 {
            start
        } else {
            dynamics.push((var(SOC, t - 1), -1.0));
            0.0
        };
        lp.add_row("soc dynamics", dynamics, RowKind::Eq, rhs);
        lp.add_row("charge limit", vec![(var(CHARGE, t), 1.0)], RowKind::Le, battery.max_charge);
        lp.add_row("discharge limit", vec![(var(DISCHARGE, t), 1.0)], RowKind::Le, battery.max_discharge);
        lp.add_row("soc bounds", vec![(var(SOC, t), 1.0)], RowKind::Le, span);
    }
    if options.terminal_soc && horizon > 0 {
        lp.add_row("terminal soc", vec![(var(SOC, horizon - 1), 1.0)], RowKind::Ge, start);
    }
    let solution = lp.solve()?;
    let x = &solution.x;

    // Rebuild the dependent quantities from charge/discharge so that balance
    // and dynamics hold to rounding.
    let mut soc = battery.soc_init;
    let periods = (0..horizon)
        .map(|t| {
            let charge = x[var(CHARGE, t)].clamp(0.0, battery.max_charge);
            let discharge = x[var(DISCHARGE, t)].clamp(0.0, battery.max_discharge);
            soc = soc + battery.efficiency_charge * charge - discharge / battery.efficiency_discharge;
            let net = load[t] + charge - pv[t] - discharge;
            PeriodDispatch { charge, discharge, grid_import: net.max(0.0), grid_export: (-net).max(0.0), soc }
        })
        .collect();
    Ok(DispatchSchedule { soc_init: battery.soc_init, periods })
}

/// Independent check of every schedule constraint. Returns the first violation.
pub fn check_schedule(
    schedule: &DispatchSchedule,
    battery: &BatterySpec,
    load: &[f64],
    pv: &[f64],
    tol: f64,
) -> Result<(), String> {
    let mut prev = schedule.soc_init;
    for (t, p) in schedule.periods.iter().enumerate() {
        let balance = load[t] + p.charge + p.grid_export - pv[t] - p.discharge - p.grid_import;
        if balance.abs() > tol {
            return Err(format!("period {t}: energy balance off by {balance:e}"));
        }
        let dynamics = prev + battery.efficiency_charge * p.charge - p.discharge / battery.efficiency_discharge - p.soc;
        if dynamics.abs() > tol {
            return Err(format!("period {t}: soc dynamics off by {dynamics:e}"));
        }
        if p.soc < battery.soc_min - tol || p.soc > battery.soc_max + tol {
            return Err(format!("period {t}: soc {} outside bounds", p.soc));
        }
        for (name, v, max) in [
            ("charge", p.charge, battery.max_charge),
            ("discharge", p.discharge, battery.max_discharge),
            ("import", p.grid_import, f64::INFINITY),
            ("export", p.grid_export, f64::INFINITY),
        ] {
            if v < -tol || v > max + tol {
                return Err(format!("period {t}: {name} {v} outside [0, {max}]"));
            }
        }
        prev = p.soc;
    }
    Ok(())
}
