//! Day-long co-simulation: HEMS scheduling, hourly double auctions,
//! settlement and a feeder power flow for every period.

mod profiles;
mod session;

pub use profiles::{
    apply_households, generate_synthetic_profiles, load_profiles, parse_profile_table, write_profile_table,
    HouseholdProfile, ProfileError, ProfileRow, ProfileTable, PROFILE_HEADER,
};
pub use session::{run_session, QuoteSnapshot, SessionOutcome};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{self, FeederError, FeederModel, PowerFlowResult};
use crate::hems::{self, BatterySpec, DispatchSchedule, HemsError, HemsOptions};
use crate::market::{self, MarketError, OrderBook, Trade, TraderId};
use crate::rng;
use crate::settlement::{
    self, DispatchRecord, MismatchPolicy, Residual, SettlementError, SettlementLedger, Tariff, PERIODS_PER_DAY,
};
use crate::units::{Energy, Price};
use crate::zip::{Role, TraderState, ZipError, ZipParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Household {
    pub id: TraderId,
    /// Installed PV, kW. Zero for no PV.
    #[serde(default)]
    pub pv_kw: f64,
    /// Battery with default limits for the given capacity, kWh.
    #[serde(default)]
    pub battery_kwh: f64,
    /// Full battery description; overrides `battery_kwh`.
    #[serde(default)]
    pub battery: Option<BatterySpec>,
    #[serde(default)]
    pub hems: bool,
    /// Per-period participation mask, one character per hour: `B` may only
    /// buy, `S` may only sell, `I` sits out, `-` follows its position.
    #[serde(default)]
    pub roles: Option<String>,
}

impl Household {
    pub fn new(id: u32, pv_kw: f64, battery_kwh: f64, hems: bool) -> Self {
        Household { id: TraderId(id), pv_kw, battery_kwh, battery: None, hems, roles: None }
    }

    pub fn battery_spec(&self) -> Option<BatterySpec> {
        match (&self.battery, self.battery_kwh) {
            (Some(b), _) => Some(b.clone()),
            (None, c) if c > 0.0 => Some(BatterySpec::with_capacity(c)),
            _ => None,
        }
    }

    fn role_mask(&self, period: usize) -> char {
        self.roles.as_deref().and_then(|m| m.chars().nth(period)).unwrap_or('-')
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TariffConfig {
    /// Retail rate per hour, c/kWh.
    pub tou: Vec<f64>,
    /// Feed-in rate, c/kWh.
    pub fit: f64,
}

impl Default for TariffConfig {
    fn default() -> Self {
        let t = Tariff::default_retail();
        TariffConfig { tou: t.tou_cents(), fit: t.fit.cents() }
    }
}

impl TariffConfig {
    pub fn to_tariff(&self) -> Tariff {
        Tariff { tou: self.tou.iter().map(|c| Price::from_cents(*c)).collect(), fit: Price::from_cents(self.fit) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub events_per_period: usize,
    pub zip: ZipParams,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig { events_per_period: 200, zip: ZipParams::default() }
    }
}

/// Delivered energy deviates from the traded amount by a factor `1 + e`,
/// `e` normal with standard deviation `sigma`, truncated to `±bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchConfig {
    pub enabled: bool,
    pub sigma: f64,
    pub bound: f64,
    pub policy: MismatchPolicy,
}

impl Default for MismatchConfig {
    fn default() -> Self {
        MismatchConfig { enabled: false, sigma: 0.02, bound: 0.1, policy: MismatchPolicy::RetailBuyback }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Profile CSV; synthetic profiles are generated from the seed when absent.
    pub profiles: Option<PathBuf>,
    /// Feeder description; the built-in five-bus feeder when absent.
    pub feeder: Option<PathBuf>,
    pub tariff: TariffConfig,
    pub market: MarketConfig,
    pub hems: HemsOptions,
    pub mismatch: MismatchConfig,
    pub households: Vec<Household>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            profiles: None,
            feeder: None,
            tariff: TariffConfig::default(),
            market: MarketConfig::default(),
            hems: HemsOptions::default(),
            mismatch: MismatchConfig::default(),
            households: vec![
                Household::new(1, 3.0, 7.5, true),
                Household::new(2, 5.0, 7.5, true),
                Household::new(3, 5.0, 0.0, false),
                Household::new(4, 0.0, 0.0, false),
                Household::new(5, 5.0, 7.5, true),
            ],
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Reads a TOML scenario. Relative file paths inside it are taken
    /// relative to the scenario file.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.profiles, &mut config.feeder].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.households.is_empty() {
            return bad("no households".into());
        }
        let mut seen = BTreeSet::new();
        for h in &self.households {
            if !seen.insert(h.id) {
                return bad(format!("household {} listed twice", h.id));
            }
            if !(h.pv_kw.is_finite() && h.pv_kw >= 0.0) || !(h.battery_kwh.is_finite() && h.battery_kwh >= 0.0) {
                return bad(format!("household {}: capacities must be non-negative", h.id));
            }
            if let Some(b) = h.battery_spec() {
                b.validate().map_err(|e| SimError::Config(format!("household {}: {e}", h.id)))?;
            }
            if let Some(mask) = &h.roles {
                if mask.chars().count() != PERIODS_PER_DAY || !mask.chars().all(|c| "BSI-".contains(c)) {
                    return bad(format!(
                        "household {}: roles must be {PERIODS_PER_DAY} characters of B, S, I or -",
                        h.id
                    ));
                }
            }
        }
        self.tariff.to_tariff().validate().map_err(|e| SimError::Config(format!("tariff: {e}")))?;
        self.market.zip.validate()?;
        if self.market.events_per_period == 0 {
            return bad("market.events_per_period must be positive".into());
        }
        let m = &self.mismatch;
        if !(m.sigma.is_finite() && m.sigma >= 0.0 && m.bound.is_finite() && (0.0..1.0).contains(&m.bound)) {
            return bad("mismatch: need sigma >= 0 and 0 <= bound < 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid profiles")]
    Profile(#[from] ProfileError),
    #[error("invalid feeder")]
    Feeder(#[from] FeederError),
    #[error("invalid trader parameters")]
    Zip(#[from] ZipError),
    #[error("HEMS schedule for household {household} failed")]
    Hems { household: TraderId, source: HemsError },
    #[error("period {period}: market error")]
    Market { period: usize, source: MarketError },
    #[error("period {period}: settlement error")]
    Settlement { period: usize, source: SettlementError },
    #[error("period {period}: power flow failed")]
    PowerFlow { period: usize, source: FeederError },
}

pub type Positions = BTreeMap<TraderId, Vec<Energy>>;

/// A validated scenario with its inputs loaded.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub tariff: Tariff,
    pub feeder: FeederModel,
    pub profiles: BTreeMap<TraderId, HouseholdProfile>,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let feeder = match &config.feeder {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| SimError::Io { path: path.clone(), source })?;
                FeederModel::parse(&text)?
            }
            None => feeder::build_default_feeder(),
        };
        feeder.validate()?;
        if let Some(h) = config.households.iter().find(|h| feeder.connection(h.id).is_none()) {
            return Err(SimError::Feeder(FeederError::UnknownHousehold(h.id)));
        }
        let profiles = match &config.profiles {
            Some(path) => load_profiles(path, &config.households)?,
            None => {
                apply_households(&generate_synthetic_profiles(config.seed, &config.households), &config.households)?
            }
        };
        Self::with_inputs(config, feeder, profiles)
    }

    /// Assembles a scenario from inputs already in memory.
    pub fn with_inputs(
        config: ScenarioConfig,
        feeder: FeederModel,
        profiles: BTreeMap<TraderId, HouseholdProfile>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        for h in &config.households {
            let p = profiles.get(&h.id).ok_or(ProfileError::MissingHousehold(h.id))?;
            if p.load.len() != PERIODS_PER_DAY || p.pv.len() != PERIODS_PER_DAY {
                return Err(ProfileError::PeriodCount { household: h.id, found: p.load.len().min(p.pv.len()) }.into());
            }
        }
        let tariff = config.tariff.to_tariff();
        Ok(Scenario { config, tariff, feeder, profiles })
    }

    /// Net position per household and period, Wh, positive for surplus,
    /// with the battery schedules behind the HEMS households.
    pub fn positions(&self) -> Result<(Positions, BTreeMap<TraderId, DispatchSchedule>), SimError> {
        let tou = self.tariff.tou_cents();
        let fit = self.tariff.fit.cents();
        let mut needs = BTreeMap::new();
        let mut schedules = BTreeMap::new();
        for h in &self.config.households {
            let p = &self.profiles[&h.id];
            let net: Vec<f64> = if h.hems {
                let battery = h.battery_spec().unwrap_or_else(BatterySpec::none);
                let s = hems::solve_schedule(&battery, &p.load, &p.pv, &tou, fit, &self.config.hems)
                    .map_err(|source| SimError::Hems { household: h.id, source })?;
                let net = s.surplus_deficit();
                schedules.insert(h.id, s);
                net
            } else {
                p.pv.iter().zip(&p.load).map(|(pv, l)| pv - l).collect()
            };
            needs.insert(h.id, net.into_iter().map(Energy::from_kwh).collect());
        }
        Ok((needs, schedules))
    }

    pub fn run(&self) -> Result<DayResult, SimError> {
        let cfg = &self.config;
        let (positions, schedules) = self.positions()?;
        let mut agents: BTreeMap<TraderId, TraderState> =
            cfg.households.iter().map(|h| (h.id, TraderState::new(h.id, &cfg.market.zip, cfg.seed))).collect();
        let mut market_rng = rng::stream(cfg.seed, "market", 0);
        let mut dispatch_rng = rng::stream(cfg.seed, "dispatch", 0);
        let noise = Normal::new(0.0, cfg.mismatch.sigma).map_err(|e| SimError::Config(e.to_string()))?;

        let mut result = DayResult {
            seed: cfg.seed,
            events_per_period: cfg.market.events_per_period,
            tariff: self.tariff.clone(),
            positions: positions.clone(),
            schedules,
            ..DayResult::default()
        };
        let mut book = OrderBook::new(0);
        for t in 0..PERIODS_PER_DAY {
            if t > 0 {
                book.open_period(t).map_err(|source| SimError::Market { period: t, source })?;
            }
            let tou = self.tariff.tou[t];
            let mut needs = BTreeMap::new();
            let mut roles = BTreeMap::new();
            for h in &cfg.households {
                let q = positions[&h.id][t];
                let natural = match q.0 {
                    0 => Role::Inactive,
                    x if x > 0 => Role::Seller,
                    _ => Role::Buyer,
                };
                let role = match (h.role_mask(t), natural) {
                    ('I', _) | ('B', Role::Seller) | ('S', Role::Buyer) => Role::Inactive,
                    _ => natural,
                };
                agents.get_mut(&h.id).expect("agent per household").set_limits(tou, self.tariff.fit, role)?;
                if role != Role::Inactive {
                    needs.insert(h.id, q.abs());
                }
                roles.insert(h.id, role);
            }
            let outcome = run_session(&mut book, &mut agents, &needs, cfg.market.events_per_period, &mut market_rng)
                .map_err(|source| SimError::Market { period: t, source })?;

            let mut bought: BTreeMap<TraderId, Energy> = BTreeMap::new();
            let mut sold: BTreeMap<TraderId, Energy> = BTreeMap::new();
            for tr in &outcome.trades {
                *bought.entry(tr.buyer).or_default() += tr.quantity;
                *sold.entry(tr.seller).or_default() += tr.quantity;
            }
            let residuals: BTreeMap<TraderId, Residual> = cfg
                .households
                .iter()
                .map(|h| {
                    let q = positions[&h.id][t];
                    let b = bought.get(&h.id).copied().unwrap_or_default();
                    let s = sold.get(&h.id).copied().unwrap_or_default();
                    let r = Residual { shortfall: (-q).max(Energy::ZERO) - b, surplus: q.max(Energy::ZERO) - s };
                    (h.id, r)
                })
                .collect();
            let entries = settlement::settle_period(&outcome.trades, &residuals, &self.tariff, t)
                .map_err(|source| SimError::Settlement { period: t, source })?;
            result.ledger.extend(entries);

            // physical draw per household, W over a one-hour period
            let mut injections: BTreeMap<TraderId, f64> =
                positions.iter().map(|(h, q)| (*h, -(q[t].0 as f64))).collect();
            if cfg.mismatch.enabled {
                for (&seller, &traded) in &sold {
                    let e = truncated(&noise, cfg.mismatch.bound, &mut dispatch_rng);
                    let dispatched = Energy((traded.0 as f64 * (1.0 + e)).round() as i64);
                    let record = DispatchRecord { seller, period: t, traded, dispatched };
                    let amount = settlement::reconcile_dispatch(&record, &self.tariff, t, cfg.mismatch.policy)
                        .map_err(|source| SimError::Settlement { period: t, source })?;
                    result.ledger.adjust(seller, t, amount);
                    *injections.get_mut(&seller).expect("seller is a household") -= record.mismatch().0 as f64;
                    result.dispatch.push(record);
                }
            }
            let flow = feeder::solve_powerflow(&self.feeder, &injections)
                .map_err(|source| SimError::PowerFlow { period: t, source })?;
            if !flow.converged {
                return Err(SimError::PowerFlow {
                    period: t,
                    source: FeederError::NotConverged { iterations: flow.iterations, mismatch: flow.mismatch },
                });
            }
            log::debug!(
                "period {t}: {} trades over {} events, {} unmatched, losses {:.1} W",
                outcome.trades.len(),
                outcome.events,
                outcome.unmatched.len(),
                flow.total_losses
            );
            result.trades.extend(outcome.trades);
            result.quotes.extend(outcome.quotes);
            result.roles.push(roles);
            result.injections.push(injections);
            result.powerflow.push(flow);
        }
        Ok(result)
    }
}

fn truncated(noise: &Normal<f64>, bound: f64, rng: &mut rng::SimRng) -> f64 {
    for _ in 0..64 {
        let e = noise.sample(rng);
        if e.abs() <= bound {
            return e;
        }
    }
    rng.random_range(-bound..=bound)
}

pub fn run_day(config: ScenarioConfig) -> Result<DayResult, SimError> {
    Scenario::from_config(config)?.run()
}

#[derive(Clone, Debug, Default)]
pub struct DayResult {
    pub seed: u64,
    pub events_per_period: usize,
    pub tariff: Tariff,
    pub trades: Vec<Trade>,
    pub ledger: SettlementLedger,
    pub powerflow: Vec<PowerFlowResult>,
    /// Household draw per period, W; negative is export.
    pub injections: Vec<BTreeMap<TraderId, f64>>,
    pub schedules: BTreeMap<TraderId, DispatchSchedule>,
    /// Net position per household and period, Wh; positive is surplus.
    pub positions: Positions,
    pub roles: Vec<BTreeMap<TraderId, Role>>,
    pub quotes: Vec<QuoteSnapshot>,
    pub dispatch: Vec<DispatchRecord>,
}

impl DayResult {
    pub fn total_losses_kwh(&self) -> f64 {
        self.powerflow.iter().map(|f| f.total_losses).sum::<f64>() / 1000.0
    }

    pub fn traded_energy(&self) -> Energy {
        self.trades.iter().map(|t| t.quantity).sum()
    }

    /// Quantity-weighted mean trade price, c/kWh.
    pub fn mean_trade_price(&self) -> Option<f64> {
        let q = self.traded_energy();
        (q.0 > 0).then(|| self.trades.iter().map(|t| t.price.cents() * t.quantity.0 as f64).sum::<f64>() / q.0 as f64)
    }

    /// (min, max) voltage magnitude at every bus and phase over the day.
    pub fn voltage_range(&self) -> (f64, f64) {
        self.powerflow
            .iter()
            .flat_map(|f| f.voltages.iter().flatten())
            .map(|v| v.norm())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let retail: Energy = self.ledger.entries.iter().map(|e| e.retail_bought).sum();
        let fit: Energy = self.ledger.entries.iter().map(|e| e.fit_sold).sum();
        let (vmin, vmax) = self.voltage_range();
        let _ = writeln!(
            s,
            "seed {}, {} households, {} events per period",
            self.seed,
            self.positions.len(),
            self.events_per_period
        );
        let _ = writeln!(s, "trades: {}, energy traded {} kWh", self.trades.len(), self.traded_energy());
        if let Some(p) = self.mean_trade_price() {
            let _ = writeln!(s, "mean trade price: {p:.2} c/kWh");
        }
        let _ = writeln!(s, "retail purchases {retail} kWh, feed-in sales {fit} kWh");
        let _ = writeln!(s, "feeder losses {:.3} kWh, voltage range {vmin:.2}-{vmax:.2} V", self.total_losses_kwh());
        if !self.dispatch.is_empty() {
            let adj: crate::units::Money = self.ledger.entries.iter().map(|e| e.dispatch_adjustment).sum();
            let _ = writeln!(s, "dispatch mismatches: {}, adjustments {:.2} c", self.dispatch.len(), adj.cents());
        }
        let _ = writeln!(s, "retailer net: {:.2} c", self.ledger.retailer_net(&self.tariff).cents());
        let _ = writeln!(s);
        let _ = writeln!(s, "{}", self.ledger.summarize_value());
        s
    }

    pub fn write_quotes_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "period,event,best_bid_c_per_kwh,best_ask_c_per_kwh")?;
        let fmt = |p: Option<Price>| p.map(|p| p.to_string()).unwrap_or_default();
        for q in &self.quotes {
            writeln!(w, "{},{},{},{}", q.period, q.event, fmt(q.best_bid), fmt(q.best_ask))?;
        }
        Ok(())
    }

    pub fn write_schedules_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "household,period,charge_kwh,discharge_kwh,import_kwh,export_kwh,soc_kwh")?;
        for (h, s) in &self.schedules {
            for (t, p) in s.periods.iter().enumerate() {
                writeln!(
                    w,
                    "{h},{t},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    p.charge, p.discharge, p.grid_import, p.grid_export, p.soc
                )?;
            }
        }
        Ok(())
    }

    pub fn write_dispatch_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "period,seller,traded_kwh,dispatched_kwh")?;
        for d in &self.dispatch {
            writeln!(w, "{},{},{},{}", d.period, d.seller, d.traded, d.dispatched)?;
        }
        Ok(())
    }

    pub fn write_powerflow_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        feeder::write_powerflow_header(&mut w)?;
        for (t, f) in self.powerflow.iter().enumerate() {
            feeder::write_powerflow_rows(&mut w, t, f)?;
        }
        Ok(())
    }

    /// Writes every output file into `dir` and returns their paths.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
        fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.to_path_buf(), source })?;
        type Writer = fn(&DayResult, &mut BufWriter<File>) -> io::Result<()>;
        let files: [(&str, Writer); 7] = [
            ("trades.csv", |r, w| market::write_trades_csv(w, &r.trades)),
            ("ledger.csv", |r, w| r.ledger.write_csv(w)),
            ("quotes.csv", |r, w| r.write_quotes_csv(w)),
            ("powerflow.csv", |r, w| r.write_powerflow_csv(w)),
            ("schedules.csv", |r, w| r.write_schedules_csv(w)),
            ("dispatch.csv", |r, w| r.write_dispatch_csv(w)),
            ("summary.txt", |r, w| w.write_all(r.summary().as_bytes())),
        ];
        let mut written = Vec::new();
        for (name, write) in files {
            let path = dir.join(name);
            let io_err = |source| SimError::Io { path: path.clone(), source };
            let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
            write(self, &mut w).and_then(|_| w.flush()).map_err(io_err)?;
            written.push(path);
        }
        Ok(written)
    }
}
