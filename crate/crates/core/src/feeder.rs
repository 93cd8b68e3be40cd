//! Radial low-voltage feeder and per-phase backward-forward sweep.
//!
//! Bus 0 is the secondary of an ideal transformer and is held at nominal
//! voltage. Households are single-phase constant-power loads; with the
//! neutral treated as perfectly grounded the three phases decouple and each
//! is solved on its own. Phasors are expressed in the reference frame of
//! their own phase, so an unloaded feeder sits at `V∠0°` on every phase.
//!
//! # Feeder file
//!
//! Whitespace-separated records, one per line, `#` starts a comment:
//!
//! ```text
//! nominal_voltage 230
//! frequency 50
//! line <from_bus> <to_bus> <r_ohm> <x_ohm> <length_m>
//! household <id> <bus> <a|b|c>
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::TraderId;

pub const NOMINAL_VOLTAGE: f64 = 230.0;
pub const DEFAULT_TOLERANCE_V: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        })
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series impedance of the whole segment, Ω per phase.
    pub impedance: Complex64,
    pub length_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Connection {
    pub household: TraderId,
    pub bus: usize,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeederModel {
    pub num_buses: usize,
    pub lines: Vec<Line>,
    pub connections: Vec<Connection>,
    pub nominal_voltage: f64,
    pub frequency: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeederError {
    #[error("feeder is not radial: {0}")]
    NotRadial(String),
    #[error("line {line} has negative resistance")]
    NegativeResistance { line: usize },
    #[error("invalid connection: {0}")]
    BadConnection(String),
    #[error("no connection for household {0}")]
    UnknownHousehold(TraderId),
    #[error("injection for household {household} is not finite")]
    NonFiniteInjection { household: TraderId },
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} V)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Five segments: 75 m then four 40 m spans, households 1..=5 on buses
/// 1..=5 with phases a, b, c, a, b.
pub fn build_default_feeder() -> FeederModel {
    let first = Line { from: 0, to: 1, impedance: Complex64::new(0.0239, 0.0218), length_m: 75.0 };
    let mut lines = vec![first];
    for bus in 1..5 {
        lines.push(Line { from: bus, to: bus + 1, impedance: Complex64::new(0.0128, 0.0116), length_m: 40.0 });
    }
    let phases = [Phase::A, Phase::B, Phase::C, Phase::A, Phase::B];
    let connections = phases
        .iter()
        .enumerate()
        .map(|(k, &phase)| Connection { household: TraderId(k as u32 + 1), bus: k + 1, phase })
        .collect();
    FeederModel { num_buses: 6, lines, connections, nominal_voltage: NOMINAL_VOLTAGE, frequency: 50.0 }
}

/// Parent/child structure of a validated radial feeder.
#[derive(Clone, Debug)]
struct Topology {
    // bus -> index of the line feeding it (None for the root)
    parent_line: Vec<Option<usize>>,
    // buses in breadth-first order from the root
    order: Vec<usize>,
}

impl FeederModel {
    pub fn validate(&self) -> Result<(), FeederError> {
        self.topology().map(|_| ())?;
        let mut seen = BTreeMap::new();
        for c in &self.connections {
            if c.bus == 0 || c.bus >= self.num_buses {
                return Err(FeederError::BadConnection(format!(
                    "household {} on bus {} (valid buses 1..{})",
                    c.household, c.bus, self.num_buses
                )));
            }
            if seen.insert(c.household, c.bus).is_some() {
                return Err(FeederError::BadConnection(format!("household {} connected twice", c.household)));
            }
        }
        Ok(())
    }

    pub fn connection(&self, household: TraderId) -> Option<&Connection> {
        self.connections.iter().find(|c| c.household == household)
    }

    fn topology(&self) -> Result<Topology, FeederError> {
        let n = self.num_buses;
        if n == 0 {
            return Err(FeederError::NotRadial("no buses".into()));
        }
        if self.lines.len() != n - 1 {
            return Err(FeederError::NotRadial(format!("{} lines for {} buses", self.lines.len(), n)));
        }
        let mut parent_line = vec![None; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, line) in self.lines.iter().enumerate() {
            if line.impedance.re < 0.0 {
                return Err(FeederError::NegativeResistance { line: k });
            }
            if line.from >= n || line.to >= n || line.from == line.to {
                return Err(FeederError::NotRadial(format!("line {k} joins {} and {}", line.from, line.to)));
            }
            if line.to == 0 || parent_line[line.to].is_some() {
                return Err(FeederError::NotRadial(format!("bus {} fed twice", line.to)));
            }
            parent_line[line.to] = Some(k);
            children[line.from].push(line.to);
        }
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([0usize]);
        let mut visited = vec![false; n];
        visited[0] = true;
        while let Some(bus) = queue.pop_front() {
            order.push(bus);
            for &child in &children[bus] {
                if visited[child] {
                    return Err(FeederError::NotRadial(format!("cycle through bus {child}")));
                }
                visited[child] = true;
                queue.push_back(child);
            }
        }
        if order.len() != n {
            return Err(FeederError::NotRadial("not every bus is reachable from bus 0".into()));
        }
        Ok(Topology { parent_line, order })
    }

    pub fn parse(text: &str) -> Result<FeederModel, FeederError> {
        let mut lines = Vec::new();
        let mut connections = Vec::new();
        let mut nominal_voltage = NOMINAL_VOLTAGE;
        let mut frequency = 50.0;
        for (k, raw) in text.lines().enumerate() {
            let lineno = k + 1;
            let err = |message: String| FeederError::Parse { line: lineno, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let num = |i: usize| -> Result<f64, FeederError> {
                let f = fields.get(i).ok_or_else(|| err(format!("missing field {}", i + 1)))?;
                f.parse::<f64>().map_err(|_| err(format!("not a number: {f:?}")))
            };
            let int = |i: usize| -> Result<usize, FeederError> {
                let f = fields.get(i).ok_or_else(|| err(format!("missing field {}", i + 1)))?;
                f.parse::<usize>().map_err(|_| err(format!("not a bus/household index: {f:?}")))
            };
            let arity = |want: usize| {
                if fields.len() == want {
                    Ok(())
                } else {
                    Err(err(format!("{} expects {} fields, found {}", fields[0], want - 1, fields.len() - 1)))
                }
            };
            match fields[0] {
                "nominal_voltage" => {
                    arity(2)?;
                    nominal_voltage = num(1)?;
                }
                "frequency" => {
                    arity(2)?;
                    frequency = num(1)?;
                }
                "line" => {
                    arity(6)?;
                    lines.push(Line {
                        from: int(1)?,
                        to: int(2)?,
                        impedance: Complex64::new(num(3)?, num(4)?),
                        length_m: num(5)?,
                    });
                }
                "household" => {
                    arity(4)?;
                    let household = TraderId(int(1)? as u32);
                    let phase = fields[3].parse::<Phase>().map_err(err)?;
                    connections.push(Connection { household, bus: int(2)?, phase });
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        let num_buses = lines.iter().map(|l| l.from.max(l.to) + 1).max().unwrap_or(1);
        let model = FeederModel { num_buses, lines, connections, nominal_voltage, frequency };
        model.validate()?;
        Ok(model)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("# from to r_ohm x_ohm length_m\n");
        s.push_str(&format!("nominal_voltage {}\nfrequency {}\n", self.nominal_voltage, self.frequency));
        for l in &self.lines {
            s.push_str(&format!("line {} {} {} {} {}\n", l.from, l.to, l.impedance.re, l.impedance.im, l.length_m));
        }
        s.push_str("# household bus phase\n");
        for c in &self.connections {
            s.push_str(&format!("household {} {} {}\n", c.household, c.bus, c.phase));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerFlowResult {
    /// `voltages[bus][phase]`, volts.
    pub voltages: Vec<[Complex64; 3]>,
    /// `line_currents[line][phase]`, amperes, positive away from the source.
    pub line_currents: Vec<[Complex64; 3]>,
    /// Complex power delivered by the source per phase, VA.
    pub source_power: [Complex64; 3],
    pub total_losses: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest voltage change of the final iteration, volts.
    pub mismatch: f64,
}

impl PowerFlowResult {
    pub fn source_active_power(&self) -> f64 {
        self.source_power.iter().map(|s| s.re).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub tolerance_v: f64,
    pub max_iterations: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { tolerance_v: DEFAULT_TOLERANCE_V, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

/// Solves the feeder for household active powers in watts (positive =
/// consumption, negative = export). Households not listed draw nothing.
pub fn solve_powerflow(
    model: &FeederModel,
    injections: &BTreeMap<TraderId, f64>,
) -> Result<PowerFlowResult, FeederError> {
    solve_powerflow_with(model, injections, SweepOptions::default())
}

pub fn solve_powerflow_with(
    model: &FeederModel,
    injections: &BTreeMap<TraderId, f64>,
    options: SweepOptions,
) -> Result<PowerFlowResult, FeederError> {
    model.validate()?;
    let topo = model.topology()?;
    let n = model.num_buses;

    let mut loads = vec![[Complex64::new(0.0, 0.0); 3]; n];
    for (&household, &watts) in injections {
        if !watts.is_finite() {
            return Err(FeederError::NonFiniteInjection { household });
        }
        let c = model.connection(household).ok_or(FeederError::UnknownHousehold(household))?;
        loads[c.bus][c.phase.index()] += Complex64::new(watts, 0.0);
    }

    let source = Complex64::new(model.nominal_voltage, 0.0);
    let mut voltages = vec![[source; 3]; n];
    let mut line_currents = vec![[Complex64::new(0.0, 0.0); 3]; model.lines.len()];
    let mut converged = true;
    let mut iterations = 0;
    let mut mismatch: f64 = 0.0;

    for ph in 0..3 {
        let mut v: Vec<Complex64> = vec![source; n];
        let mut i_line = vec![Complex64::new(0.0, 0.0); model.lines.len()];
        let mut done = false;
        let mut k = 0;
        let mut last = 0.0;
        while k < options.max_iterations {
            k += 1;
            backward(model, &topo, &loads, ph, &v, &mut i_line);
            // forward: root to leaves
            let mut delta: f64 = 0.0;
            for &bus in topo.order.iter().skip(1) {
                let li = topo.parent_line[bus].expect("non-root bus has a parent line");
                let line = &model.lines[li];
                let updated = v[line.from] - line.impedance * i_line[li];
                delta = delta.max((updated - v[bus]).norm());
                v[bus] = updated;
            }
            last = delta;
            if !delta.is_finite() {
                break;
            }
            if delta < options.tolerance_v {
                done = true;
                break;
            }
        }
        // currents consistent with the final voltages
        backward(model, &topo, &loads, ph, &v, &mut i_line);
        converged &= done;
        iterations = iterations.max(k);
        mismatch = mismatch.max(last);
        for bus in 0..n {
            voltages[bus][ph] = v[bus];
        }
        for (li, current) in i_line.iter().enumerate() {
            line_currents[li][ph] = *current;
        }
    }

    let mut source_power = [Complex64::new(0.0, 0.0); 3];
    for (li, line) in model.lines.iter().enumerate() {
        if line.from == 0 {
            for ph in 0..3 {
                source_power[ph] += source * line_currents[li][ph].conj();
            }
        }
    }
    let total_losses = line_losses(model, &line_currents);
    Ok(PowerFlowResult { voltages, line_currents, source_power, total_losses, converged, iterations, mismatch })
}

/// Accumulates load currents from the leaves towards the root.
fn backward(
    model: &FeederModel,
    topo: &Topology,
    loads: &[[Complex64; 3]],
    ph: usize,
    v: &[Complex64],
    i_line: &mut [Complex64],
) {
    let mut through = vec![Complex64::new(0.0, 0.0); v.len()];
    for &bus in topo.order.iter().rev() {
        let s = loads[bus][ph];
        if s.re != 0.0 || s.im != 0.0 {
            through[bus] += (s / v[bus]).conj();
        }
        if let Some(li) = topo.parent_line[bus] {
            i_line[li] = through[bus];
            let carried = through[bus];
            through[model.lines[li].from] += carried;
        }
    }
}

fn line_losses(model: &FeederModel, currents: &[[Complex64; 3]]) -> f64 {
    model
        .lines
        .iter()
        .zip(currents)
        .map(|(line, i)| i.iter().map(|c| c.norm_sqr() * line.impedance.re).sum::<f64>())
        .sum()
}

/// Total series losses Σ|I|²R in watts.
pub fn losses(result: &PowerFlowResult, model: &FeederModel) -> Result<f64, FeederError> {
    if !result.converged {
        return Err(FeederError::NotConverged { iterations: result.iterations, mismatch: result.mismatch });
    }
    Ok(line_losses(model, &result.line_currents))
}

pub const POWERFLOW_CSV_HEADER: &str = "period,bus,phase,v_mag,v_angle_deg";

pub fn write_powerflow_header<W: Write>(mut w: W) -> io::Result<()> {
    writeln!(w, "{POWERFLOW_CSV_HEADER}")
}

pub fn write_powerflow_rows<W: Write>(mut w: W, period: usize, result: &PowerFlowResult) -> io::Result<()> {
    for (bus, phases) in result.voltages.iter().enumerate() {
        for ph in Phase::ALL {
            let v = phases[ph.index()];
            writeln!(w, "{period},{bus},{ph},{:.6},{:.6}", v.norm(), v.arg().to_degrees())?;
        }
    }
    Ok(())
}
