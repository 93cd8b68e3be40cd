//! Continuous double auction order book.
//!
//! Bids are kept sorted by (price desc, time asc) and asks by (price asc,
//! time asc). Every submission is matched immediately: while the best ask is
//! at or below the best bid, the pair trades the smaller of the two remaining
//! quantities at the price of whichever order reached the book first.
//!
//! Each trader holds at most one resting order per side; a new submission on
//! the same side replaces the old one. Submitting against one's own resting
//! opposite order is rejected.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Energy, Price};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TraderId(pub u32);

impl fmt::Display for TraderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub trader: TraderId,
    pub side: Side,
    pub price: Price,
    pub quantity: Energy,
    /// Event ordinal within the period. Must strictly increase per book.
    pub time: u64,
    pub period: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: TraderId,
    pub seller: TraderId,
    pub price: Price,
    pub quantity: Energy,
    pub period: usize,
    /// Ordinal of the submission that triggered the match.
    pub time: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarketError {
    #[error("malformed order {id:?}: {reason}")]
    MalformedOrder { id: OrderId, reason: &'static str },
    #[error("market closed for period {period}")]
    MarketClosed { period: usize },
    #[error("order for period {got} submitted to book open for period {open}")]
    WrongPeriod { open: usize, got: usize },
    #[error("order time {got} does not follow previous time {last}")]
    NonMonotoneTime { last: u64, got: u64 },
    #[error("trader {trader} already rests an opposite order; self-trading is not allowed")]
    SelfTrade { trader: TraderId },
    #[error("period {period} is already closed")]
    AlreadyClosed { period: usize },
    #[error("period {period} is already open")]
    AlreadyOpen { period: usize },
}

type BidKey = (Reverse<Price>, u64);
type AskKey = (Price, u64);

#[derive(Clone, Debug)]
pub struct OrderBook {
    period: usize,
    open: bool,
    last_time: Option<u64>,
    bids: BTreeMap<BidKey, Order>,
    asks: BTreeMap<AskKey, Order>,
    // (trader, side) -> (price, time) of its resting order
    resting: HashMap<(TraderId, Side), (Price, u64)>,
}

impl OrderBook {
    /// A fresh book, open for `period`.
    pub fn new(period: usize) -> Self {
        OrderBook {
            period,
            open: true,
            last_time: None,
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            resting: HashMap::new(),
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    /// Reopens a closed book for a new period. Time ordinals restart.
    pub fn open_period(&mut self, period: usize) -> Result<(), MarketError> {
        if self.open {
            return Err(MarketError::AlreadyOpen { period: self.period });
        }
        self.period = period;
        self.open = true;
        self.last_time = None;
        Ok(())
    }

    /// The next unused time ordinal.
    pub fn next_time(&self) -> u64 {
        self.last_time.map_or(0, |t| t + 1)
    }

    pub fn best_quotes(&self) -> (Option<Price>, Option<Price>) {
        (self.bids.values().next().map(|o| o.price), self.asks.values().next().map(|o| o.price))
    }

    pub fn bids(&self) -> impl Iterator<Item = &Order> {
        self.bids.values()
    }

    pub fn asks(&self) -> impl Iterator<Item = &Order> {
        self.asks.values()
    }

    pub fn resting_order(&self, trader: TraderId, side: Side) -> Option<&Order> {
        let (price, time) = *self.resting.get(&(trader, side))?;
        match side {
            Side::Bid => self.bids.get(&(Reverse(price), time)),
            Side::Ask => self.asks.get(&(price, time)),
        }
    }

    pub fn len(&self) -> usize {
        self.bids.len() + self.asks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds `order` to the book and matches until the book is uncrossed.
    /// Returns the resulting trades in execution order.
    pub fn submit(&mut self, order: Order) -> Result<Vec<Trade>, MarketError> {
        if !self.open {
            return Err(MarketError::MarketClosed { period: self.period });
        }
        if order.period != self.period {
            return Err(MarketError::WrongPeriod { open: self.period, got: order.period });
        }
        if order.quantity.0 <= 0 {
            return Err(MarketError::MalformedOrder { id: order.id, reason: "quantity must be positive" });
        }
        if order.price.0 < 0 {
            return Err(MarketError::MalformedOrder { id: order.id, reason: "price must be non-negative" });
        }
        if let Some(last) = self.last_time {
            if order.time <= last {
                return Err(MarketError::NonMonotoneTime { last, got: order.time });
            }
        }
        if self.resting.contains_key(&(order.trader, order.side.opposite())) {
            return Err(MarketError::SelfTrade { trader: order.trader });
        }

        self.last_time = Some(order.time);
        self.cancel(order.trader, order.side);
        self.insert(order.clone());
        Ok(self.match_crossed(order.time))
    }

    /// Cancels and returns every resting order, closing the period.
    pub fn close_period(&mut self) -> Result<Vec<Order>, MarketError> {
        if !self.open {
            return Err(MarketError::AlreadyClosed { period: self.period });
        }
        self.open = false;
        self.resting.clear();
        let mut out: Vec<Order> = std::mem::take(&mut self.bids).into_values().collect();
        out.extend(std::mem::take(&mut self.asks).into_values());
        Ok(out)
    }

    fn cancel(&mut self, trader: TraderId, side: Side) -> Option<Order> {
        let (price, time) = self.resting.remove(&(trader, side))?;
        match side {
            Side::Bid => self.bids.remove(&(Reverse(price), time)),
            Side::Ask => self.asks.remove(&(price, time)),
        }
    }

    fn insert(&mut self, order: Order) {
        self.resting.insert((order.trader, order.side), (order.price, order.time));
        match order.side {
            Side::Bid => {
                self.bids.insert((Reverse(order.price), order.time), order);
            }
            Side::Ask => {
                self.asks.insert((order.price, order.time), order);
            }
        }
    }

    fn match_crossed(&mut self, time: u64) -> Vec<Trade> {
        let mut trades = Vec::new();
        while let (Some(mut bid_entry), Some(mut ask_entry)) = (self.bids.first_entry(), self.asks.first_entry()) {
            let (bid, ask) = (bid_entry.get_mut(), ask_entry.get_mut());
            if ask.price > bid.price {
                break;
            }
            let price = if bid.time <= ask.time { bid.price } else { ask.price };
            let quantity = bid.quantity.min(ask.quantity);
            bid.quantity -= quantity;
            ask.quantity -= quantity;
            trades.push(Trade { buyer: bid.trader, seller: ask.trader, price, quantity, period: self.period, time });
            if bid.quantity.is_zero() {
                let filled = bid_entry.remove();
                self.resting.remove(&(filled.trader, Side::Bid));
            }
            if ask.quantity.is_zero() {
                let filled = ask_entry.remove();
                self.resting.remove(&(filled.trader, Side::Ask));
            }
        }
        trades
    }
}

pub const TRADE_CSV_HEADER: &str = "period,time,buyer,seller,price_c_per_kwh,qty_kwh";

pub fn write_trades_csv<W: Write>(mut w: W, trades: &[Trade]) -> io::Result<()> {
    writeln!(w, "{TRADE_CSV_HEADER}")?;
    for t in trades {
        writeln!(w, "{},{},{},{},{},{}", t.period, t.time, t.buyer, t.seller, t.price, t.quantity)?;
    }
    Ok(())
}
