//! Household load and PV profiles.
//!
//! CSV schema, one row per household and hour:
//!
//! ```text
//! household,period,load_kwh,pv_kwh_per_kw
//! 1,0,0.412,0
//! ```
//!
//! PV is given for a 1 kW reference array and scaled by each household's
//! installed capacity when loaded.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use super::Household;
use crate::market::TraderId;
use crate::rng;
use crate::settlement::PERIODS_PER_DAY;

pub const PROFILE_HEADER: &str = "household,period,load_kwh,pv_kwh_per_kw";

/// Raw per-household rows as stored in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub load_kwh: [f64; PERIODS_PER_DAY],
    pub pv_kwh_per_kw: [f64; PERIODS_PER_DAY],
}

pub type ProfileTable = BTreeMap<TraderId, ProfileRow>;

/// Load and scaled PV for one household, kWh per hour.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseholdProfile {
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Cell { line: usize, column: &'static str, message: String },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("household {household}: expected {PERIODS_PER_DAY} periods, found {found}")]
    PeriodCount { household: TraderId, found: usize },
    #[error("household {0} missing from profile file")]
    MissingHousehold(TraderId),
    #[error("household {household} has no PV but its pv_kwh_per_kw column is nonzero at period {period}")]
    UnexpectedPv { household: TraderId, period: usize },
}

pub fn parse_profile_table(text: &str) -> Result<ProfileTable, ProfileError> {
    let mut rows: BTreeMap<TraderId, (ProfileRow, [bool; PERIODS_PER_DAY])> = BTreeMap::new();
    let mut header_seen = false;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        if !header_seen {
            let header: Vec<&str> = content.split(',').map(str::trim).collect();
            if header.join(",") != PROFILE_HEADER {
                return Err(ProfileError::Row { line, message: format!("expected header {PROFILE_HEADER:?}") });
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = content.split(',').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(ProfileError::Row { line, message: format!("expected 4 columns, found {}", cells.len()) });
        }
        let household = cells[0].parse::<u32>().map(TraderId).map_err(|_| ProfileError::Cell {
            line,
            column: "household",
            message: format!("not a household id: {:?}", cells[0]),
        })?;
        let period = cells[1].parse::<usize>().map_err(|_| ProfileError::Cell {
            line,
            column: "period",
            message: format!("not a period index: {:?}", cells[1]),
        })?;
        if period >= PERIODS_PER_DAY {
            return Err(ProfileError::Cell {
                line,
                column: "period",
                message: format!("period {period} outside 0..23"),
            });
        }
        let value = |idx: usize, column: &'static str| -> Result<f64, ProfileError> {
            let v = cells[idx].parse::<f64>().map_err(|_| ProfileError::Cell {
                line,
                column,
                message: format!("not a number: {:?}", cells[idx]),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(ProfileError::Cell {
                    line,
                    column,
                    message: format!("must be a non-negative number, got {v}"),
                });
            }
            Ok(v)
        };
        let load = value(2, "load_kwh")?;
        let pv = value(3, "pv_kwh_per_kw")?;
        let entry = rows.entry(household).or_insert_with(|| {
            (
                ProfileRow { load_kwh: [0.0; PERIODS_PER_DAY], pv_kwh_per_kw: [0.0; PERIODS_PER_DAY] },
                [false; PERIODS_PER_DAY],
            )
        });
        if entry.1[period] {
            return Err(ProfileError::Row {
                line,
                message: format!("duplicate row for household {household} period {period}"),
            });
        }
        entry.1[period] = true;
        entry.0.load_kwh[period] = load;
        entry.0.pv_kwh_per_kw[period] = pv;
    }
    if !header_seen {
        return Err(ProfileError::Row { line: 1, message: "empty profile file".into() });
    }
    rows.into_iter()
        .map(|(h, (row, seen))| {
            let found = seen.iter().filter(|s| **s).count();
            if found != PERIODS_PER_DAY {
                return Err(ProfileError::PeriodCount { household: h, found });
            }
            Ok((h, row))
        })
        .collect()
}

/// Scales the reference PV by installed capacity and checks the roster.
pub fn apply_households(
    table: &ProfileTable,
    households: &[Household],
) -> Result<BTreeMap<TraderId, HouseholdProfile>, ProfileError> {
    households
        .iter()
        .map(|h| {
            let row = table.get(&h.id).ok_or(ProfileError::MissingHousehold(h.id))?;
            if h.pv_kw <= 0.0 {
                if let Some(period) = row.pv_kwh_per_kw.iter().position(|v| *v != 0.0) {
                    return Err(ProfileError::UnexpectedPv { household: h.id, period });
                }
            }
            let profile = HouseholdProfile {
                load: row.load_kwh.to_vec(),
                pv: row.pv_kwh_per_kw.iter().map(|v| v * h.pv_kw.max(0.0)).collect(),
            };
            Ok((h.id, profile))
        })
        .collect()
}

pub fn load_profiles(
    path: &Path,
    households: &[Household],
) -> Result<BTreeMap<TraderId, HouseholdProfile>, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io { path: path.to_path_buf(), source })?;
    apply_households(&parse_profile_table(&text)?, households)
}

pub fn write_profile_table(table: &ProfileTable) -> String {
    let mut out = String::new();
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for (h, row) in table {
        for t in 0..PERIODS_PER_DAY {
            let _ = writeln!(out, "{h},{t},{},{}", row.load_kwh[t], row.pv_kwh_per_kw[t]);
        }
    }
    out
}

/// Energy of a unit half-sine over 06:00–18:00 falling in hour `h`.
fn half_sine_hour(h: usize) -> f64 {
    if !(6..18).contains(&h) {
        return 0.0;
    }
    let phase = |t: f64| (PI * (t - 6.0) / 12.0).cos();
    12.0 / PI * (phase(h as f64) - phase(h as f64 + 1.0))
}

/// Peak PV output per installed kW on a clear day.
const PV_PEAK_PER_KW: f64 = 0.7;

/// Seeded stand-in profiles: half-sine PV over daylight, a morning/evening
/// double-peak load of 8–20 kWh per day. Households without PV get a zero
/// PV column.
pub fn generate_synthetic_profiles(seed: u64, households: &[Household]) -> ProfileTable {
    let round4 = |x: f64| (x * 1e4).round() / 1e4;
    households
        .iter()
        .map(|h| {
            let mut rng = rng::stream(seed, "profiles", u64::from(h.id.0));
            let clearness: f64 = rng.random_range(0.8..=1.0);
            let mut pv = [0.0; PERIODS_PER_DAY];
            if h.pv_kw > 0.0 {
                for (t, v) in pv.iter_mut().enumerate() {
                    let jitter: f64 = rng.random_range(0.9..=1.0);
                    *v = round4(PV_PEAK_PER_KW * clearness * jitter * half_sine_hour(t));
                }
            }
            let daily: f64 = rng.random_range(9.0..=18.0);
            let mut shape = [0.0; PERIODS_PER_DAY];
            for (t, s) in shape.iter_mut().enumerate() {
                let hour = t as f64 + 0.5;
                let morning = (-((hour - 7.5) / 1.5).powi(2)).exp();
                let evening = 1.6 * (-((hour - 19.0) / 2.0).powi(2)).exp();
                *s = (0.35 + morning + evening) * rng.random_range(0.9..=1.1);
            }
            let total: f64 = shape.iter().sum();
            let load = shape.map(|s| round4(s * daily / total));
            (h.id, ProfileRow { load_kwh: load, pv_kwh_per_kw: pv })
        })
        .collect()
}
