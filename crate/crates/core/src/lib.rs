//! Peer-to-peer residential energy market simulation.
//!
//! A continuous double auction clears hourly trades between households whose
//! Zero-Intelligence-Plus agents adapt their quotes, a linear program
//! schedules home batteries against a time-of-use tariff, a backward-forward
//! sweep solves the unbalanced low-voltage feeder for every period, and a
//! settlement ledger books peer trades, retail residuals and the value each
//! side captures. [`sim::run_day`] ties it together.

pub mod feeder;
pub mod hems;
pub mod lp;
pub mod market;
pub mod metering;
pub mod rng;
pub mod settlement;
pub mod sim;
pub mod units;
pub mod zip;

pub use feeder::{FeederModel, Phase, PowerFlowResult};
pub use hems::{BatterySpec, DispatchSchedule};
pub use market::{Order, OrderBook, Side, Trade, TraderId};
pub use settlement::{SettlementLedger, Tariff};
pub use sim::{run_day, DayResult, ScenarioConfig, SimError};
pub use units::{Energy, Money, Price};
pub use zip::{Role, TraderState, ZipParams};
