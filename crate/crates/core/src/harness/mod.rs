//! Configuration, Monte Carlo trials, statistical verifiers and the privacy audit.

pub mod audit;
pub mod config;
pub mod trials;
pub mod verify;

pub use audit::{privacy_audit, privacy_audit_with, PrivacyAudit};
pub use config::{AdaptiveSection, ArrivalOrder, MarketSection, OutcomeRule, RosterEntry, RunConfig, SeedRange};
pub use trials::{run_trial, run_trials, summarize, write_outputs, Roster, SummaryRow, TrialMetrics};
pub use verify::{verify_budget, verify_precision, verify_run_dir, verify_share_accuracy, Check, CheckReport};
