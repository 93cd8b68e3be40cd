//! Zero-Intelligence-Plus trader agents.
//!
//! A trader quotes `limit × (1 + margin)`. Buyers keep a margin in [-1, 0]
//! under their retail ceiling, sellers a non-negative margin over the feed-in
//! floor. After every market event each active trader decides whether to
//! raise, lower or hold its quote, then moves it toward a perturbed copy of
//! the event price with a Widrow-Hoff step plus momentum.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{Order, OrderId, Side, TraderId};
use crate::rng::{self, SimRng};
use crate::units::{Energy, Price};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
    Inactive,
}

impl Role {
    pub fn side(self) -> Option<Side> {
        match self {
            Role::Buyer => Some(Side::Bid),
            Role::Seller => Some(Side::Ask),
            Role::Inactive => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZipParams {
    pub learn_rate: f64,
    pub momentum: f64,
    /// Upper bound of the relative target perturbation (R - 1).
    pub relative_perturbation: f64,
    /// Upper bound of the absolute target perturbation, as a fraction of the event price.
    pub absolute_perturbation: f64,
    pub buyer_margin: (f64, f64),
    pub seller_margin: (f64, f64),
}

impl Default for ZipParams {
    fn default() -> Self {
        ZipParams {
            learn_rate: 0.3,
            momentum: 0.05,
            relative_perturbation: 0.05,
            absolute_perturbation: 0.05,
            buyer_margin: (-0.35, -0.05),
            seller_margin: (0.05, 0.35),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZipError {
    #[error("retail rate {tou} c/kWh must exceed feed-in rate {fit} c/kWh")]
    DegenerateTariff { tou: Price, fit: Price },
    #[error("invalid ZIP parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

impl ZipParams {
    pub fn validate(&self) -> Result<(), ZipError> {
        let check = |ok: bool, name, value| if ok { Ok(()) } else { Err(ZipError::InvalidParam { name, value }) };
        check(self.learn_rate > 0.0 && self.learn_rate <= 1.0, "learn_rate", self.learn_rate)?;
        check((0.0..1.0).contains(&self.momentum), "momentum", self.momentum)?;
        check(self.relative_perturbation >= 0.0, "relative_perturbation", self.relative_perturbation)?;
        check(self.absolute_perturbation >= 0.0, "absolute_perturbation", self.absolute_perturbation)?;
        let (lo, hi) = self.buyer_margin;
        check(-1.0 <= lo && lo <= hi && hi <= 0.0, "buyer_margin", lo)?;
        let (lo, hi) = self.seller_margin;
        check(0.0 <= lo && lo <= hi, "seller_margin", lo)?;
        Ok(())
    }
}

/// What an agent observed last: the side of the most recent order, the price
/// it traded at (or its own quote when unmatched) and whether it traded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketEvent {
    pub last_order_side: Side,
    pub last_price: Price,
    pub matched: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjustment {
    Raise,
    Lower,
    Hold,
}

/// Branch selection of the quote update rule. `quote` and `price` in c/kWh.
pub fn adjustment(role: Role, quote: f64, event: &MarketEvent) -> Adjustment {
    let p = event.last_price.cents();
    match role {
        Role::Inactive => Adjustment::Hold,
        Role::Buyer => {
            if event.matched {
                if quote >= p {
                    Adjustment::Lower
                } else if event.last_order_side == Side::Ask {
                    Adjustment::Raise
                } else {
                    Adjustment::Hold
                }
            } else if event.last_order_side == Side::Bid && quote <= p {
                Adjustment::Raise
            } else {
                Adjustment::Hold
            }
        }
        Role::Seller => {
            if event.matched {
                if quote <= p {
                    Adjustment::Raise
                } else if event.last_order_side == Side::Bid {
                    Adjustment::Lower
                } else {
                    Adjustment::Hold
                }
            } else if event.last_order_side == Side::Ask && quote >= p {
                Adjustment::Lower
            } else {
                Adjustment::Hold
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraderState {
    pub trader: TraderId,
    pub role: Role,
    pub limit_price: Price,
    /// Current quote in c/kWh, on the price grid and within the limit constraint.
    pub quote_price: f64,
    pub margin: f64,
    pub momentum_term: f64,
    pub learn_rate: f64,
    pub momentum: f64,
    relative_perturbation: f64,
    absolute_perturbation: f64,
    buyer_margin: (f64, f64),
    seller_margin: (f64, f64),
    // role the current quote was formed under
    quote_role: Option<Role>,
    rng: SimRng,
}

impl TraderState {
    /// An inactive trader whose random stream is derived from `seed` and its id.
    pub fn new(trader: TraderId, params: &ZipParams, seed: u64) -> Self {
        TraderState {
            trader,
            role: Role::Inactive,
            limit_price: Price::ZERO,
            quote_price: 0.0,
            margin: 0.0,
            momentum_term: 0.0,
            learn_rate: params.learn_rate,
            momentum: params.momentum,
            relative_perturbation: params.relative_perturbation,
            absolute_perturbation: params.absolute_perturbation,
            buyer_margin: params.buyer_margin,
            seller_margin: params.seller_margin,
            quote_role: None,
            rng: rng::stream(seed, "zip-trader", u64::from(trader.0)),
        }
    }

    /// Sets the role for a period and the matching limit: buyers are capped
    /// by the retail rate, sellers floored by the feed-in rate. A quote formed
    /// under the same role is clamped into range; a role switch draws a fresh
    /// margin.
    pub fn set_limits(&mut self, tou: Price, fit: Price, role: Role) -> Result<(), ZipError> {
        if tou <= fit {
            return Err(ZipError::DegenerateTariff { tou, fit });
        }
        self.role = role;
        let limit = match role {
            Role::Buyer => tou,
            Role::Seller => fit,
            Role::Inactive => return Ok(()),
        };
        self.limit_price = limit;
        if self.quote_role == Some(role) {
            self.quote_price = self.clamp(self.quote_price);
        } else {
            let (lo, hi) = match role {
                Role::Buyer => self.buyer_margin,
                _ => self.seller_margin,
            };
            let margin = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
            self.quote_price = self.clamp(limit.cents() * (1.0 + margin));
            self.momentum_term = 0.0;
            self.quote_role = Some(role);
        }
        self.margin = self.margin_of(self.quote_price);
        Ok(())
    }

    /// Applies one market event and reports which way the quote was pushed.
    pub fn update_on_event(&mut self, event: &MarketEvent) -> Adjustment {
        let adj = adjustment(self.role, self.quote_price, event);
        if adj == Adjustment::Hold {
            return adj;
        }
        let p = event.last_price.cents();
        let (r, a) = match adj {
            Adjustment::Raise => (
                self.rng.random_range(1.0..=1.0 + self.relative_perturbation),
                self.rng.random_range(0.0..=self.absolute_perturbation) * p,
            ),
            _ => (
                self.rng.random_range(1.0 - self.relative_perturbation..=1.0),
                -self.rng.random_range(0.0..=self.absolute_perturbation) * p,
            ),
        };
        let target = r * p + a;
        let delta = self.learn_rate * (target - self.quote_price);
        self.momentum_term = self.momentum * self.momentum_term + (1.0 - self.momentum) * delta;
        let moved = self.quote_price + self.momentum_term;
        // momentum may carry an opposite-signed history; never step against the rule
        let moved = match adj {
            Adjustment::Raise => moved.max(self.quote_price),
            _ => moved.min(self.quote_price),
        };
        self.quote_price = self.clamp(moved);
        self.margin = self.margin_of(self.quote_price);
        adj
    }

    /// An order for the whole outstanding `residual` at the current quote.
    pub fn make_order(&self, residual: Energy, time: u64, period: usize) -> Option<Order> {
        let side = self.role.side()?;
        if residual.0 <= 0 {
            return None;
        }
        let price = match side {
            Side::Bid => Price::floor_cents(self.quote_price).min(self.limit_price).max(Price::ZERO),
            Side::Ask => Price::ceil_cents(self.quote_price).max(self.limit_price),
        };
        Some(Order { id: OrderId(time), trader: self.trader, side, price, quantity: residual, time, period })
    }

    /// Snaps to the price grid and into the limit range.
    fn clamp(&self, quote: f64) -> f64 {
        let quote = Price::from_cents(quote).cents();
        let limit = self.limit_price.cents();
        match self.role {
            Role::Buyer => quote.clamp(0.0, limit),
            Role::Seller => quote.max(limit),
            Role::Inactive => quote.max(0.0),
        }
    }

    fn margin_of(&self, quote: f64) -> f64 {
        let limit = self.limit_price.cents();
        if limit > 0.0 {
            quote / limit - 1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trader(role: Role, seed: u64) -> TraderState {
        let mut t = TraderState::new(TraderId(1), &ZipParams::default(), seed);
        t.set_limits(Price::from_cents(20.0), Price::from_cents(5.0), role).unwrap();
        t
    }

    fn event(side: Side, cents: f64, matched: bool) -> MarketEvent {
        MarketEvent { last_order_side: side, last_price: Price::from_cents(cents), matched }
    }

    #[test]
    fn buyer_above_trade_price_lowers() {
        let mut t = trader(Role::Buyer, 1);
        t.quote_price = 12.0;
        let adj = t.update_on_event(&event(Side::Bid, 10.0, true));
        assert_eq!(adj, Adjustment::Lower);
        assert!(t.quote_price < 12.0);
    }

    #[test]
    fn buyer_ignores_unmatched_ask() {
        let mut t = trader(Role::Buyer, 1);
        t.quote_price = 8.0;
        let adj = t.update_on_event(&event(Side::Ask, 9.0, false));
        assert_eq!(adj, Adjustment::Hold);
        assert_eq!(t.quote_price, 8.0);
    }

    #[test]
    fn branch_table() {
        use Adjustment::*;
        let cases = [
            // buyer
            (Role::Buyer, 8.0, event(Side::Ask, 9.0, true), Raise),
            (Role::Buyer, 8.0, event(Side::Bid, 9.0, true), Hold),
            (Role::Buyer, 8.0, event(Side::Bid, 9.0, false), Raise),
            (Role::Buyer, 10.0, event(Side::Bid, 9.0, false), Hold),
            (Role::Buyer, 9.0, event(Side::Ask, 9.0, true), Lower),
            // seller
            (Role::Seller, 8.0, event(Side::Ask, 9.0, true), Raise),
            (Role::Seller, 10.0, event(Side::Bid, 9.0, true), Lower),
            (Role::Seller, 10.0, event(Side::Ask, 9.0, true), Hold),
            (Role::Seller, 10.0, event(Side::Ask, 9.0, false), Lower),
            (Role::Seller, 8.0, event(Side::Ask, 9.0, false), Hold),
            (Role::Seller, 10.0, event(Side::Bid, 9.0, false), Hold),
            (Role::Inactive, 10.0, event(Side::Bid, 9.0, true), Hold),
        ];
        for (role, quote, ev, want) in cases {
            assert_eq!(adjustment(role, quote, &ev), want, "{role:?} {quote} {ev:?}");
        }
    }

    #[test]
    fn limits_from_tariff() {
        let mut t = TraderState::new(TraderId(3), &ZipParams::default(), 9);
        t.set_limits(Price::from_cents(49.24), Price::from_cents(6.1), Role::Buyer).unwrap();
        assert_eq!(t.limit_price, Price::from_cents(49.24));
        t.set_limits(Price::from_cents(49.24), Price::from_cents(6.1), Role::Seller).unwrap();
        assert_eq!(t.limit_price, Price::from_cents(6.1));
        assert_eq!(
            t.set_limits(Price::from_cents(6.1), Price::from_cents(6.1), Role::Buyer),
            Err(ZipError::DegenerateTariff { tou: Price(610), fit: Price(610) })
        );
    }

    #[test]
    fn stale_buyer_quote_is_clamped() {
        let mut t = TraderState::new(TraderId(3), &ZipParams::default(), 9);
        t.set_limits(Price::from_cents(60.0), Price::from_cents(6.1), Role::Buyer).unwrap();
        t.quote_price = 55.0;
        t.set_limits(Price::from_cents(20.9), Price::from_cents(6.1), Role::Buyer).unwrap();
        assert_eq!(t.quote_price, 20.9);
        assert_eq!(t.margin, 0.0);
    }

    #[test]
    fn initial_margins_in_range() {
        for seed in 0..50 {
            let b = trader(Role::Buyer, seed);
            assert!((-0.35..=-0.05).contains(&b.margin), "{}", b.margin);
            let s = trader(Role::Seller, seed);
            assert!((0.05..=0.35 + 1e-12).contains(&s.margin), "{}", s.margin);
        }
    }

    #[test]
    fn orders_follow_residual() {
        let mut t = trader(Role::Buyer, 4);
        t.quote_price = 7.5;
        let o = t.make_order(Energy::from_kwh(3.0), 5, 0).unwrap();
        assert_eq!((o.side, o.price, o.quantity), (Side::Bid, Price::from_cents(7.5), Energy(3000)));

        let mut s = trader(Role::Seller, 4);
        assert!(s.make_order(Energy::ZERO, 0, 0).is_none());
        s.quote_price = 7.123;
        let o = s.make_order(Energy(2000), 0, 0).unwrap();
        assert_eq!(o.price, Price(713));
        // after a 1 kWh fill the next order carries the remaining 1 kWh
        let o = s.make_order(Energy(2000) - Energy(1000), 1, 0).unwrap();
        assert_eq!(o.quantity, Energy(1000));

        let idle = TraderState::new(TraderId(9), &ZipParams::default(), 0);
        assert!(idle.make_order(Energy(1000), 0, 0).is_none());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = |seed| {
            let mut t = trader(Role::Seller, seed);
            for k in 0..30 {
                t.update_on_event(&event(Side::Ask, 5.0 + k as f64 * 0.3, k % 3 == 0));
            }
            t.quote_price
        };
        assert_eq!(run(11).to_bits(), run(11).to_bits());
    }

    fn arb_event() -> impl Strategy<Value = MarketEvent> {
        (any::<bool>(), 0i64..6000, any::<bool>()).prop_map(|(bid, p, matched)| MarketEvent {
            last_order_side: if bid { Side::Bid } else { Side::Ask },
            last_price: Price(p),
            matched,
        })
    }

    proptest! {
        #[test]
        fn moves_follow_the_fired_branch(
            seed in any::<u64>(),
            buyer in any::<bool>(),
            events in prop::collection::vec(arb_event(), 1..60),
        ) {
            let role = if buyer { Role::Buyer } else { Role::Seller };
            let mut t = trader(role, seed);
            for ev in &events {
                let before = t.quote_price;
                let adj = t.update_on_event(ev);
                match adj {
                    Adjustment::Raise => prop_assert!(t.quote_price >= before),
                    Adjustment::Lower => prop_assert!(t.quote_price <= before),
                    Adjustment::Hold => prop_assert_eq!(t.quote_price, before),
                }
                prop_assert!(t.quote_price >= 0.0);
                match role {
                    Role::Buyer => {
                        prop_assert!(t.quote_price <= 20.0);
                        prop_assert!((-1.0..=0.0).contains(&t.margin));
                    }
                    _ => {
                        prop_assert!(t.quote_price >= 5.0);
                        prop_assert!(t.margin >= 0.0);
                    }
                }
                if let Some(o) = t.make_order(Energy(1000), 0, 0) {
                    match role {
                        Role::Buyer => prop_assert!(o.price <= Price::from_cents(20.0)),
                        _ => prop_assert!(o.price >= Price::from_cents(5.0)),
                    }
                }
            }
        }
    }
}
