//! Differentially private prediction markets with a bounded designer budget.
//!
//! A scaled LMSR market maker publishes prices perturbed by a noise trader
//! that follows a binary-counter schedule, charges a flat fee per trade, and
//! can grow through stages of increasing length.

pub mod adaptive_market;
pub mod cost_function;
pub mod error;
pub mod fee_market;
pub mod harness;
pub mod noise_schedule;
pub mod traders;

pub use cost_function::{CostKind, OutcomeModel, PriceVector, ScaledCost, SharesVector};
pub use error::{MarketError, Result};
pub use fee_market::{Ledger, MarketParams, MarketSession};
pub use noise_schedule::{NoiseLedger, NoiseMode};
