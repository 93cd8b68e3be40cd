//! One trading period of the double auction with ZIP agents.

use std::collections::BTreeMap;

use rand::Rng;

use crate::market::{MarketError, Order, OrderBook, Trade, TraderId};
use crate::rng::SimRng;
use crate::units::{Energy, Price};
use crate::zip::{MarketEvent, Role, TraderState};

/// Best quotes after one submission.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuoteSnapshot {
    pub period: usize,
    pub event: usize,
    pub best_bid: Option<Price>,
    pub best_ask: Option<Price>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionOutcome {
    pub trades: Vec<Trade>,
    pub quotes: Vec<QuoteSnapshot>,
    /// Quantity each active trader still wanted when the period closed.
    pub residual: BTreeMap<TraderId, Energy>,
    pub unmatched: Vec<Order>,
    pub events: usize,
}

/// Runs `max_events` submissions against an open `book` and closes it.
///
/// Agents must already carry their role and limits for the period. Each
/// event a random active agent with an outstanding quantity posts an order
/// for all of it at its current quote; every resulting trade is broadcast to
/// all active agents as a matched event, and a submission that trades nothing
/// is broadcast as an unmatched event at its own price. The session ends
/// early when nobody has anything left to trade.
pub fn run_session(
    book: &mut OrderBook,
    agents: &mut BTreeMap<TraderId, TraderState>,
    needs: &BTreeMap<TraderId, Energy>,
    max_events: usize,
    rng: &mut SimRng,
) -> Result<SessionOutcome, MarketError> {
    let period = book.period();
    let mut residual: BTreeMap<TraderId, Energy> = agents
        .iter()
        .filter(|(_, a)| a.role != Role::Inactive)
        .map(|(id, _)| (*id, needs.get(id).copied().unwrap_or(Energy::ZERO).max(Energy::ZERO)))
        .collect();
    let mut outcome = SessionOutcome::default();
    for event in 0..max_events {
        let ready: Vec<TraderId> = residual.iter().filter(|(_, q)| q.0 > 0).map(|(id, _)| *id).collect();
        if ready.is_empty() {
            break;
        }
        let who = ready[rng.random_range(0..ready.len())];
        let time = book.next_time();
        let Some(order) = agents[&who].make_order(residual[&who], time, period) else {
            continue;
        };
        let (side, price) = (order.side, order.price);
        let trades = book.submit(order)?;
        let events: Vec<MarketEvent> = if trades.is_empty() {
            vec![MarketEvent { last_order_side: side, last_price: price, matched: false }]
        } else {
            trades.iter().map(|t| MarketEvent { last_order_side: side, last_price: t.price, matched: true }).collect()
        };
        for t in &trades {
            *residual.get_mut(&t.buyer).expect("buyer is active") -= t.quantity;
            *residual.get_mut(&t.seller).expect("seller is active") -= t.quantity;
        }
        for ev in &events {
            for agent in agents.values_mut().filter(|a| a.role != Role::Inactive) {
                agent.update_on_event(ev);
            }
        }
        let (best_bid, best_ask) = book.best_quotes();
        outcome.quotes.push(QuoteSnapshot { period, event, best_bid, best_ask });
        outcome.trades.extend(trades);
        outcome.events = event + 1;
    }
    outcome.unmatched = book.close_period()?;
    outcome.residual = residual;
    Ok(outcome)
}
