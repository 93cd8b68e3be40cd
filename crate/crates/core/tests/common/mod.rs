#![allow(dead_code)]

use gridmarket::market::{MarketError, Order, OrderId, Side, Trade, TraderId};
use gridmarket::units::{Energy, Price};
use rand::Rng;

/// Straight-line double auction: resting orders in one flat list, the best
/// pair found by a full scan after every submission.
pub struct ReferenceBook {
    period: usize,
    last_time: Option<u64>,
    resting: Vec<Order>,
}

impl ReferenceBook {
    pub fn new(period: usize) -> Self {
        ReferenceBook { period, last_time: None, resting: Vec::new() }
    }

    pub fn resting(&self) -> &[Order] {
        &self.resting
    }

    pub fn submit(&mut self, order: Order) -> Result<Vec<Trade>, MarketError> {
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
        if self.resting.iter().any(|o| o.trader == order.trader && o.side != order.side) {
            return Err(MarketError::SelfTrade { trader: order.trader });
        }
        self.last_time = Some(order.time);
        self.resting.retain(|o| !(o.trader == order.trader && o.side == order.side));
        let time = order.time;
        self.resting.push(order);

        let mut trades = Vec::new();
        loop {
            let mut best_bid: Option<usize> = None;
            let mut best_ask: Option<usize> = None;
            for (k, o) in self.resting.iter().enumerate() {
                match o.side {
                    Side::Bid => {
                        let better = best_bid.is_none_or(|b| {
                            let cur = &self.resting[b];
                            o.price > cur.price || (o.price == cur.price && o.time < cur.time)
                        });
                        if better {
                            best_bid = Some(k);
                        }
                    }
                    Side::Ask => {
                        let better = best_ask.is_none_or(|a| {
                            let cur = &self.resting[a];
                            o.price < cur.price || (o.price == cur.price && o.time < cur.time)
                        });
                        if better {
                            best_ask = Some(k);
                        }
                    }
                }
            }
            let (Some(b), Some(a)) = (best_bid, best_ask) else { break };
            let (bid, ask) = (&self.resting[b], &self.resting[a]);
            if bid.price < ask.price {
                break;
            }
            let price = if bid.time <= ask.time { bid.price } else { ask.price };
            let quantity = if bid.quantity < ask.quantity { bid.quantity } else { ask.quantity };
            trades.push(Trade { buyer: bid.trader, seller: ask.trader, price, quantity, period: self.period, time });
            self.resting[b].quantity -= quantity;
            self.resting[a].quantity -= quantity;
            self.resting.retain(|o| o.quantity.0 > 0);
        }
        Ok(trades)
    }
}

/// A random order stream: up to 50 orders from eight traders, whole-cent
/// prices 1–50 c/kWh, quantities 1–5 kWh in half-kWh steps.
pub fn random_stream<R: Rng>(rng: &mut R) -> Vec<Order> {
    let n = rng.random_range(1..=50);
    (0..n)
        .map(|k| {
            let side = if rng.random_bool(0.5) { Side::Bid } else { Side::Ask };
            Order {
                id: OrderId(k as u64),
                trader: TraderId(rng.random_range(1..=8)),
                side,
                price: Price::from_cents(f64::from(rng.random_range(1..=50))),
                quantity: Energy(500 * rng.random_range(2..=10)),
                time: k as u64,
                period: 0,
            }
        })
        .collect()
}

use gridmarket::hems::{BatterySpec, DispatchSchedule};

/// Every constraint of a dispatch schedule, checked from scratch.
pub fn dispatch_violations(s: &DispatchSchedule, b: &BatterySpec, load: &[f64], pv: &[f64], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let mut soc = s.soc_init;
    if s.periods.len() != load.len() {
        out.push(format!("horizon {} vs {}", s.periods.len(), load.len()));
        return out;
    }
    for (t, p) in s.periods.iter().enumerate() {
        let supply = pv[t] + p.discharge + p.grid_import;
        let demand = load[t] + p.charge + p.grid_export;
        if (supply - demand).abs() > tol {
            out.push(format!("t{t} balance {}", supply - demand));
        }
        soc += b.efficiency_charge * p.charge - p.discharge / b.efficiency_discharge;
        if (soc - p.soc).abs() > tol {
            out.push(format!("t{t} soc {} vs {}", p.soc, soc));
        }
        if p.soc < b.soc_min - tol || p.soc > b.soc_max + tol {
            out.push(format!("t{t} soc {} out of range", p.soc));
        }
        if p.charge < -tol || p.charge > b.max_charge + tol {
            out.push(format!("t{t} charge {}", p.charge));
        }
        if p.discharge < -tol || p.discharge > b.max_discharge + tol {
            out.push(format!("t{t} discharge {}", p.discharge));
        }
        if p.grid_import < -tol || p.grid_export < -tol {
            out.push(format!("t{t} negative grid flow"));
        }
    }
    out
}
