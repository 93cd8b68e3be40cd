//! Per-period settlement against the retail tariff.
//!
//! Trades settle at their own price. Whatever a household could not buy in
//! the market is bought at the period's time-of-use rate; whatever it could
//! not sell earns the feed-in rate. Value captured is measured against that
//! pure-retail baseline: a buyer gains `(tou − price)·qty`, a seller
//! `(price − fit)·qty`, so per trade the two always add up to
//! `(tou − fit)·qty` whatever the price.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Trade, TraderId};
use crate::units::{Energy, Money, Price};

pub const PERIODS_PER_DAY: usize = 24;
pub const ANNUALIZATION_DAYS: i64 = 365;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tariff {
    pub tou: Vec<Price>,
    pub fit: Price,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SettlementError {
    #[error("tariff must list {PERIODS_PER_DAY} rates, found {0}")]
    TariffLength(usize),
    #[error("tariff rates must be positive")]
    NonPositiveRate,
    #[error("feed-in rate {fit} must be below every retail rate (min {min_tou})")]
    FitNotBelowTou { fit: Price, min_tou: Price },
    #[error("period {0} outside the tariff day")]
    PeriodOutOfRange(usize),
    #[error("negative residual for household {household}: {what} = {value} kWh")]
    NegativeResidual { household: TraderId, what: &'static str, value: Energy },
    #[error("trade for period {got} settled in period {expected}")]
    TradePeriod { expected: usize, got: usize },
}

impl Default for Tariff {
    fn default() -> Self {
        Tariff::default_retail()
    }
}

impl Tariff {
    /// Standing-offer style schedule: peak 49.24 c/kWh 14:00–20:00, shoulder
    /// 20.9 c/kWh 07:00–14:00 and 20:00–22:00, off-peak 15.1 c/kWh otherwise,
    /// feed-in 6.1 c/kWh. Shoulder and off-peak rates are synthetic defaults.
    pub fn default_retail() -> Tariff {
        let peak = Price::from_cents(49.24);
        let shoulder = Price::from_cents(20.9);
        let off_peak = Price::from_cents(15.1);
        let tou = (0..PERIODS_PER_DAY)
            .map(|h| match h {
                14..=19 => peak,
                7..=13 | 20..=21 => shoulder,
                _ => off_peak,
            })
            .collect();
        Tariff { tou, fit: Price::from_cents(6.1) }
    }

    pub fn validate(&self) -> Result<(), SettlementError> {
        if self.tou.len() != PERIODS_PER_DAY {
            return Err(SettlementError::TariffLength(self.tou.len()));
        }
        if self.fit.0 <= 0 || self.tou.iter().any(|r| r.0 <= 0) {
            return Err(SettlementError::NonPositiveRate);
        }
        let min_tou = *self.tou.iter().min().expect("non-empty");
        if self.fit >= min_tou {
            return Err(SettlementError::FitNotBelowTou { fit: self.fit, min_tou });
        }
        Ok(())
    }

    pub fn rate(&self, period: usize) -> Result<Price, SettlementError> {
        self.tou.get(period).copied().ok_or(SettlementError::PeriodOutOfRange(period))
    }

    pub fn tou_cents(&self) -> Vec<f64> {
        self.tou.iter().map(|p| p.cents()).collect()
    }
}

/// Energy a household still needed to buy or sell when the period closed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Residual {
    pub shortfall: Energy,
    pub surplus: Energy,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub household: TraderId,
    pub period: usize,
    pub p2p_bought: Energy,
    pub p2p_sold: Energy,
    pub retail_bought: Energy,
    pub fit_sold: Energy,
    pub dispatch_adjustment: Money,
    /// Net cash to the household; negative when it pays.
    pub cash_flow: Money,
    pub buyer_value: Money,
    pub seller_value: Money,
    /// Trade value at the retail spread, Σ (tou − fit)·qty, over purchases.
    pub spread_bought: Money,
}

fn entry_mut(entries: &mut BTreeMap<TraderId, LedgerEntry>, household: TraderId, period: usize) -> &mut LedgerEntry {
    entries.entry(household).or_insert_with(|| LedgerEntry { household, period, ..Default::default() })
}

pub fn settle_period(
    trades: &[Trade],
    residuals: &BTreeMap<TraderId, Residual>,
    tariff: &Tariff,
    period: usize,
) -> Result<Vec<LedgerEntry>, SettlementError> {
    let tou = tariff.rate(period)?;
    let fit = tariff.fit;
    let mut entries: BTreeMap<TraderId, LedgerEntry> = BTreeMap::new();
    for (&household, r) in residuals {
        for (what, value) in [("shortfall", r.shortfall), ("surplus", r.surplus)] {
            if value.0 < 0 {
                return Err(SettlementError::NegativeResidual { household, what, value });
            }
        }
        let e = entry_mut(&mut entries, household, period);
        e.retail_bought = r.shortfall;
        e.fit_sold = r.surplus;
        e.cash_flow += fit * r.surplus - tou * r.shortfall;
    }
    for t in trades {
        if t.period != period {
            return Err(SettlementError::TradePeriod { expected: period, got: t.period });
        }
        let b = entry_mut(&mut entries, t.buyer, period);
        b.p2p_bought += t.quantity;
        b.cash_flow -= t.price * t.quantity;
        b.buyer_value += (tou - t.price) * t.quantity;
        b.spread_bought += (tou - fit) * t.quantity;

        let s = entry_mut(&mut entries, t.seller, period);
        s.p2p_sold += t.quantity;
        s.cash_flow += t.price * t.quantity;
        s.seller_value += (t.price - fit) * t.quantity;
    }
    Ok(entries.into_values().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchPolicy {
    /// Under-delivery is bought back at retail, over-delivery earns feed-in.
    #[default]
    RetailBuyback,
    /// Mismatches are recorded but not charged.
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub seller: TraderId,
    pub period: usize,
    pub traded: Energy,
    pub dispatched: Energy,
}

impl DispatchRecord {
    pub fn mismatch(&self) -> Energy {
        self.dispatched - self.traded
    }
}

/// Cash adjustment to the seller for delivering `dispatched` against `traded`.
pub fn reconcile_dispatch(
    record: &DispatchRecord,
    tariff: &Tariff,
    period: usize,
    policy: MismatchPolicy,
) -> Result<Money, SettlementError> {
    let tou = tariff.rate(period)?;
    let m = record.mismatch();
    Ok(match policy {
        MismatchPolicy::Ignore => Money::ZERO,
        MismatchPolicy::RetailBuyback if m.0 < 0 => tou * m,
        MismatchPolicy::RetailBuyback => tariff.fit * m,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementLedger {
    pub entries: Vec<LedgerEntry>,
}

impl SettlementLedger {
    pub fn extend(&mut self, entries: impl IntoIterator<Item = LedgerEntry>) {
        self.entries.extend(entries);
    }

    /// Books a dispatch adjustment on an existing entry.
    pub fn adjust(&mut self, household: TraderId, period: usize, amount: Money) -> bool {
        match self.entries.iter_mut().find(|e| e.household == household && e.period == period) {
            Some(e) => {
                e.dispatch_adjustment += amount;
                e.cash_flow += amount;
                true
            }
            None => false,
        }
    }

    pub fn total_buyer_value(&self) -> Money {
        self.entries.iter().map(|e| e.buyer_value).sum()
    }

    pub fn total_seller_value(&self) -> Money {
        self.entries.iter().map(|e| e.seller_value).sum()
    }

    pub fn total_spread(&self) -> Money {
        self.entries.iter().map(|e| e.spread_bought).sum()
    }

    /// Net cash received by the retailer.
    pub fn retailer_net(&self, tariff: &Tariff) -> Money {
        self.entries
            .iter()
            .map(|e| tariff.tou[e.period] * e.retail_bought - tariff.fit * e.fit_sold - e.dispatch_adjustment)
            .sum()
    }

    pub fn p2p_bought(&self) -> Energy {
        self.entries.iter().map(|e| e.p2p_bought).sum()
    }

    pub fn p2p_sold(&self) -> Energy {
        self.entries.iter().map(|e| e.p2p_sold).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "household,period,p2p_bought_kwh,p2p_sold_kwh,retail_bought_kwh,fit_sold_kwh,\
             dispatch_adjustment_c,cash_flow_c,buyer_value_c,seller_value_c"
        )?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                e.household,
                e.period,
                e.p2p_bought,
                e.p2p_sold,
                e.retail_bought,
                e.fit_sold,
                e.dispatch_adjustment,
                e.cash_flow,
                e.buyer_value,
                e.seller_value
            )?;
        }
        Ok(())
    }

    pub fn summarize_value(&self) -> ValueSummary {
        let mut per: BTreeMap<TraderId, (Money, Money)> = BTreeMap::new();
        for e in &self.entries {
            let v = per.entry(e.household).or_default();
            v.0 += e.buyer_value;
            v.1 += e.seller_value;
        }
        ValueSummary {
            households: per.into_iter().map(|(h, (b, s))| (h, b, s)).collect(),
            buyer: self.total_buyer_value(),
            seller: self.total_seller_value(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub households: Vec<(TraderId, Money, Money)>,
    pub buyer: Money,
    pub seller: Money,
}

impl ValueSummary {
    pub fn total(&self) -> Money {
        self.buyer + self.seller
    }

    /// (buyer %, seller %); zero when no value was captured.
    pub fn shares(&self) -> (f64, f64) {
        let total = self.total();
        if total.0 <= 0 {
            return (0.0, 0.0);
        }
        let b = 100.0 * self.buyer.0 as f64 / total.0 as f64;
        (b, 100.0 - b)
    }

    pub fn annual(amount: Money) -> Money {
        Money(amount.0 * ANNUALIZATION_DAYS)
    }
}

impl fmt::Display for ValueSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.households.len().max(1) as f64;
        let row = |f: &mut fmt::Formatter<'_>, label: &str, vals: [f64; 3]| {
            writeln!(f, "{label:<44}{:>10.2}{:>10.2}{:>10.2}", vals[0], vals[1], vals[2])
        };
        let (b, s, t) = (self.buyer.dollars(), self.seller.dollars(), self.total().dollars());
        let (bs, ss) = self.shares();
        let ts = if self.total().0 > 0 { 100.0 } else { 0.0 };
        writeln!(f, "Value captured by each market participant")?;
        writeln!(f, "{:<44}{:>10}{:>10}{:>10}", "", "Buyer", "Seller", "Total")?;
        row(f, "Daily Value ($)", [b, s, t])?;
        let days = ANNUALIZATION_DAYS as f64;
        row(f, "Expected Annual Value ($, daily x 365)", [b * days, s * days, t * days])?;
        row(f, "Expected Annual Value per Household ($)", [b * days / n, s * days / n, t * days / n])?;
        row(f, "Proportion of Value Captured (%)", [bs, ss, ts])?;
        writeln!(f)?;
        writeln!(f, "Per household (daily, $)")?;
        writeln!(f, "{:<12}{:>10}{:>10}{:>10}", "household", "buyer", "seller", "total")?;
        for (h, bv, sv) in &self.households {
            writeln!(
                f,
                "{:<12}{:>10.2}{:>10.2}{:>10.2}",
                format!("H{h}"),
                bv.dollars(),
                sv.dollars(),
                (*bv + *sv).dollars()
            )?;
        }
        writeln!(f)?;
        write!(f, "Annual figures are projections (daily value x {ANNUALIZATION_DAYS}).")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_tariff(tou: f64, fit: f64) -> Tariff {
        Tariff { tou: vec![Price::from_cents(tou); 24], fit: Price::from_cents(fit) }
    }

    fn trade(buyer: u32, seller: u32, cents: f64, kwh: f64) -> Trade {
        Trade {
            buyer: TraderId(buyer),
            seller: TraderId(seller),
            price: Price::from_cents(cents),
            quantity: Energy::from_kwh(kwh),
            period: 0,
            time: 0,
        }
    }

    #[test]
    fn default_schedule() {
        let t = Tariff::default_retail();
        t.validate().unwrap();
        assert_eq!(t.tou[15], Price::from_cents(49.24));
        assert_eq!(t.tou[10], Price::from_cents(20.9));
        assert_eq!(t.tou[21], Price::from_cents(20.9));
        assert_eq!(t.tou[3], Price::from_cents(15.1));
        assert_eq!(t.fit, Price::from_cents(6.1));
    }

    #[test]
    fn tariff_validation() {
        assert_eq!(
            flat_tariff(6.0, 6.1).validate(),
            Err(SettlementError::FitNotBelowTou { fit: Price(610), min_tou: Price(600) })
        );
        let short = Tariff { tou: vec![Price(100); 3], fit: Price(10) };
        assert_eq!(short.validate(), Err(SettlementError::TariffLength(3)));
    }

    #[test]
    fn pure_retail_consumer() {
        let tariff = flat_tariff(20.9, 6.1);
        let residuals = BTreeMap::from([(TraderId(4), Residual { shortfall: Energy(2000), surplus: Energy::ZERO })]);
        let e = settle_period(&[], &residuals, &tariff, 0).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].cash_flow.cents() + 41.8).abs() < 1e-12);
        assert_eq!(e[0].buyer_value, Money::ZERO);
        assert_eq!(e[0].seller_value, Money::ZERO);
    }

    #[test]
    fn value_split_of_one_trade() {
        let tariff = flat_tariff(20.0, 6.1);
        let e = settle_period(&[trade(4, 2, 8.0, 2.0)], &BTreeMap::new(), &tariff, 0).unwrap();
        let buyer = e.iter().find(|x| x.household == TraderId(4)).unwrap();
        let seller = e.iter().find(|x| x.household == TraderId(2)).unwrap();
        assert!((buyer.buyer_value.cents() - 24.0).abs() < 1e-12);
        assert!((seller.seller_value.cents() - 3.8).abs() < 1e-12);
        assert!((buyer.cash_flow.cents() + 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_residuals_and_foreign_trades() {
        let tariff = flat_tariff(20.0, 6.1);
        let residuals = BTreeMap::from([(TraderId(1), Residual { shortfall: Energy(-1), surplus: Energy::ZERO })]);
        assert!(matches!(
            settle_period(&[], &residuals, &tariff, 0),
            Err(SettlementError::NegativeResidual { what: "shortfall", .. })
        ));
        let mut t = trade(1, 2, 8.0, 1.0);
        t.period = 3;
        assert_eq!(
            settle_period(&[t], &BTreeMap::new(), &tariff, 0),
            Err(SettlementError::TradePeriod { expected: 0, got: 3 })
        );
        assert_eq!(settle_period(&[], &BTreeMap::new(), &tariff, 24), Err(SettlementError::PeriodOutOfRange(24)));
    }

    #[test]
    fn dispatch_reconciliation() {
        let tariff = flat_tariff(20.0, 6.1);
        let rec = |traded, dispatched| DispatchRecord {
            seller: TraderId(2),
            period: 0,
            traded: Energy(traded),
            dispatched: Energy(dispatched),
        };
        let p = MismatchPolicy::RetailBuyback;
        assert_eq!(reconcile_dispatch(&rec(2000, 2000), &tariff, 0, p).unwrap(), Money::ZERO);
        let under = reconcile_dispatch(&rec(2000, 1800), &tariff, 0, p).unwrap();
        assert!((under.cents() + 4.0).abs() < 1e-12);
        let over = reconcile_dispatch(&rec(2000, 2100), &tariff, 0, p).unwrap();
        assert!((over.cents() - 0.61).abs() < 1e-12);
        assert_eq!(reconcile_dispatch(&rec(2000, 1800), &tariff, 0, MismatchPolicy::Ignore).unwrap(), Money::ZERO);
    }

    #[test]
    fn empty_summary() {
        let s = SettlementLedger::default().summarize_value();
        assert_eq!(s.total(), Money::ZERO);
        assert_eq!(s.shares(), (0.0, 0.0));
        assert!(s.to_string().contains("Daily Value ($)"));
    }

    #[test]
    fn summary_table_layout() {
        let tariff = flat_tariff(20.0, 6.1);
        let mut ledger = SettlementLedger::default();
        ledger.extend(settle_period(&[trade(4, 2, 8.0, 2.0)], &BTreeMap::new(), &tariff, 0).unwrap());
        let s = ledger.summarize_value();
        let (b, sh) = s.shares();
        assert!((b + sh - 100.0).abs() < 1e-12);
        let text = s.to_string();
        assert!(text.contains("Proportion of Value Captured (%)"));
        assert!(text.contains("H4"));
    }

    proptest! {
        #[test]
        fn buyer_plus_seller_value_is_the_spread(
            tou in 700i64..6000,
            fit in 100i64..650,
            trades in prop::collection::vec((0.0f64..1.0, 1i64..5000), 1..40),
        ) {
            let tariff = Tariff { tou: vec![Price(tou); 24], fit: Price(fit) };
            let trades: Vec<Trade> = trades
                .iter()
                .enumerate()
                .map(|(k, &(frac, qty))| Trade {
                    buyer: TraderId((k % 3) as u32),
                    seller: TraderId(10 + (k % 2) as u32),
                    price: Price(fit + ((tou - fit) as f64 * frac) as i64),
                    quantity: Energy(qty),
                    period: 5,
                    time: k as u64,
                })
                .collect();
            let residuals: BTreeMap<TraderId, Residual> = (0..3)
                .map(|h| (TraderId(h), Residual { shortfall: Energy(100 * i64::from(h)), surplus: Energy::ZERO }))
                .collect();
            let mut ledger = SettlementLedger::default();
            ledger.extend(settle_period(&trades, &residuals, &tariff, 5).unwrap());
            let spread: Money = trades.iter().map(|t| (Price(tou) - Price(fit)) * t.quantity).sum();
            prop_assert_eq!(ledger.total_buyer_value() + ledger.total_seller_value(), spread);
            prop_assert_eq!(ledger.total_spread(), spread);
            prop_assert_eq!(ledger.p2p_bought(), ledger.p2p_sold());
            let cash: Money = ledger.entries.iter().map(|e| e.cash_flow).sum();
            prop_assert_eq!(cash + ledger.retailer_net(&tariff), Money::ZERO);
        }
    }
}
