//! Run configuration, loaded from JSON. Unknown fields are rejected.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive_market::{stage_schedule, stage_schedule_with_override, StageSchedule};
use crate::cost_function::{CostKind, PriceVector};
use crate::error::{MarketError, Result};
use crate::fee_market::{lambda_star, MarketParams};
use crate::noise_schedule::NoiseMode;
use crate::traders::StrategyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub d: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub horizon: u64,
    /// Defaults to `alpha`.
    #[serde(default)]
    pub fee: Option<f64>,
    /// Explicit price sensitivity; defaults to `lambda_star`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Multiplies `lambda_star` when `lambda` is absent.
    #[serde(default)]
    pub lambda_scale: Option<f64>,
    #[serde(default)]
    pub noise_off: bool,
    /// Permit a `lambda` above `lambda_star` (for tightness experiments).
    #[serde(default)]
    pub allow_unsafe_lambda: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSection {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Replaces the first stage length; later stages still quadruple.
    #[serde(default)]
    pub stage_override: Option<u64>,
    pub max_stages: u32,
    /// Handoff clamp margin; defaults to `alpha / (4 d)`.
    #[serde(default)]
    pub eta: Option<f64>,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub strategy: StrategyConfig,
    #[serde(default = "one")]
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalOrder {
    #[default]
    RoundRobin,
    Random,
}

/// How the market settles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeRule {
    Fixed { outcome: usize },
    /// Draw the outcome per seed.
    Sample { probabilities: Vec<f64> },
    /// Settle every security at its expected payoff.
    Expected { probabilities: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    /// Exclusive.
    pub end: u64,
}

impl SeedRange {
    pub fn range(&self) -> Range<u64> {
        self.start..self.end
    }

    /// Parses `a..b` (end exclusive).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || MarketError::Config {
            field: "seeds".into(),
            message: format!("expected `start..end`, got `{s}`"),
        };
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start = a.trim().parse().map_err(|_| bad())?;
        let end = b.trim().parse().map_err(|_| bad())?;
        let r = SeedRange { start, end };
        if r.end <= r.start {
            return Err(MarketError::Config { field: "seeds".into(), message: "seed range is empty".into() });
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    #[serde(default)]
    pub adaptive: Option<AdaptiveSection>,
    pub traders: Vec<RosterEntry>,
    #[serde(default)]
    pub arrival_order: ArrivalOrder,
    /// Arrival opportunities per trial; defaults to the market's capacity.
    #[serde(default)]
    pub opportunities: Option<u64>,
    pub outcome: OutcomeRule,
    pub seeds: SeedRange,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn field_err(field: impl Into<String>, e: impl std::fmt::Display) -> MarketError {
    MarketError::Config { field: field.into(), message: e.to_string() }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn adaptive_enabled(&self) -> bool {
        self.adaptive.as_ref().is_some_and(|a| a.enabled)
    }

    pub fn fee(&self) -> f64 {
        self.market.fee.unwrap_or(self.market.alpha)
    }

    pub fn noise_mode(&self) -> NoiseMode {
        if self.market.noise_off {
            NoiseMode::Off
        } else {
            NoiseMode::Laplace
        }
    }

    /// Parameters of the single fee market this config describes.
    pub fn market_params(&self) -> Result<MarketParams> {
        let m = &self.market;
        let star = lambda_star(m.horizon, m.alpha, m.gamma, m.epsilon, m.d).map_err(|e| field_err("market", e))?;
        let lambda = match (m.lambda, m.lambda_scale) {
            (Some(_), Some(_)) => {
                return Err(field_err("market.lambda_scale", "give either lambda or lambda_scale, not both"))
            }
            (Some(l), None) => l,
            (None, Some(s)) => star * s,
            (None, None) => star,
        };
        let mut p = MarketParams::new(m.d, m.epsilon, m.alpha, m.gamma, m.horizon)
            .map_err(|e| field_err("market", e))?
            .with_fee(self.fee())
            .with_lambda(lambda)
            .with_noise(self.noise_mode());
        if m.allow_unsafe_lambda {
            p = p.allowing_unsafe_lambda();
        }
        p.validate().map_err(|e| field_err("market.lambda", e))?;
        Ok(p)
    }

    pub fn schedule(&self) -> Result<Option<StageSchedule>> {
        let Some(a) = self.adaptive.as_ref().filter(|a| a.enabled) else {
            return Ok(None);
        };
        let m = &self.market;
        let b1 = CostKind::Lmsr.base_loss(m.d);
        let s = match a.stage_override {
            Some(t) => stage_schedule_with_override(b1, m.d, m.alpha, m.gamma, m.epsilon, a.max_stages, t as u128),
            None => stage_schedule(b1, m.d, m.alpha, m.gamma, m.epsilon, a.max_stages),
        };
        s.map(Some).map_err(|e| field_err("adaptive", e))
    }

    /// Opportunities per trial when none are configured: every slot the
    /// market (or every stage of the schedule) can fill.
    pub fn effective_opportunities(&self) -> Result<u64> {
        if let Some(n) = self.opportunities {
            return Ok(n);
        }
        match self.schedule()? {
            Some(s) => {
                let total: u128 = s.stages.iter().map(|st| st.horizon).sum();
                u64::try_from(total).map_err(|_| field_err("opportunities", "stage capacity exceeds u64; set opportunities"))
            }
            None => Ok(self.market.horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.market;
        if m.d == 0 {
            return Err(field_err("market.d", "need at least one security"));
        }
        if let Some(f) = m.fee {
            if !(f.is_finite() && f >= 0.0) {
                return Err(field_err("market.fee", format!("fee must be finite and non-negative, got {f}")));
            }
        }
        if let Some(s) = m.lambda_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(field_err("market.lambda_scale", format!("must be positive, got {s}")));
            }
        }
        self.market_params()?;
        if let Some(a) = &self.adaptive {
            if a.max_stages == 0 {
                return Err(field_err("adaptive.max_stages", "need at least one stage"));
            }
            if let Some(eta) = a.eta {
                if !(eta > 0.0 && eta < 1.0 / m.d as f64) {
                    return Err(field_err("adaptive.eta", format!("must lie in (0, 1/d), got {eta}")));
                }
            }
            if a.enabled && m.d < 2 {
                return Err(field_err("adaptive", "staging needs d >= 2 (B1 = ln d must be positive)"));
            }
            self.schedule()?;
        }
        if self.traders.is_empty() {
            return Err(field_err("traders", "roster is empty"));
        }
        for (i, t) in self.traders.iter().enumerate() {
            if t.count == 0 {
                return Err(field_err(format!("traders[{i}].count"), "count must be positive"));
            }
            t.strategy.validate(m.d).map_err(|e| field_err(format!("traders[{i}].strategy"), e))?;
        }
        if self.opportunities == Some(0) {
            return Err(field_err("opportunities", "must be positive"));
        }
        match &self.outcome {
            OutcomeRule::Fixed { outcome } => {
                if *outcome >= m.d {
                    return Err(field_err("outcome.outcome", format!("outcome {outcome} out of range for d = {}", m.d)));
                }
            }
            OutcomeRule::Sample { probabilities } | OutcomeRule::Expected { probabilities } => {
                if probabilities.len() != m.d {
                    return Err(field_err("outcome.probabilities", format!("need {} probabilities", m.d)));
                }
                PriceVector::new(probabilities.clone())
                    .validate_distribution(1e-9)
                    .map_err(|e| field_err("outcome.probabilities", e))?;
            }
        }
        if self.seeds.end <= self.seeds.start {
            return Err(field_err("seeds", "seed range is empty"));
        }
        self.effective_opportunities()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "market": {"d": 2, "epsilon": 1.0, "alpha": 0.3, "gamma": 0.1, "horizon": 64},
        "traders": [{"strategy": {"kind": "herd", "coordinate": 0}, "count": 2}, {"strategy": {"kind": "random"}}],
        "outcome": {"rule": "fixed", "outcome": 0},
        "seeds": {"start": 0, "end": 10}
    }"#;

    #[test]
    fn parses_and_defaults() {
        let c = RunConfig::from_json(BASE).unwrap();
        assert_eq!(c.fee(), 0.3);
        assert_eq!(c.arrival_order, ArrivalOrder::RoundRobin);
        assert_eq!(c.effective_opportunities().unwrap(), 64);
        let p = c.market_params().unwrap();
        assert_eq!(p.lambda, lambda_star(64, 0.3, 0.1, 1.0, 2).unwrap());
    }

    #[test]
    fn unknown_field_rejected() {
        let text = BASE.replace("\"horizon\": 64", "\"horizon\": 64, \"bogus\": 1");
        assert!(matches!(RunConfig::from_json(&text), Err(MarketError::Json(_))));
    }

    #[test]
    fn field_level_errors() {
        let text = BASE.replace("\"outcome\": 0", "\"outcome\": 5");
        match RunConfig::from_json(&text) {
            Err(MarketError::Config { field, .. }) => assert_eq!(field, "outcome.outcome"),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("\"coordinate\": 0", "\"coordinate\": 9");
        match RunConfig::from_json(&text) {
            Err(MarketError::Config { field, .. }) => assert_eq!(field, "traders[0].strategy"),
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("\"horizon\": 64", "\"horizon\": 64, \"lambda_scale\": 50.0");
        match RunConfig::from_json(&text) {
            Err(MarketError::Config { field, .. }) => assert_eq!(field, "market.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adaptive_capacity() {
        let text = BASE.replace(
            "\"traders\"",
            "\"adaptive\": {\"stage_override\": 16, \"max_stages\": 3}, \"traders\"",
        );
        let c = RunConfig::from_json(&text).unwrap();
        assert!(c.adaptive_enabled());
        assert_eq!(c.effective_opportunities().unwrap(), 16 + 64 + 256);
    }

    #[test]
    fn seed_range_parse() {
        assert_eq!(SeedRange::parse("3..7").unwrap().range(), 3..7);
        assert!(SeedRange::parse("7..3").is_err());
        assert!(SeedRange::parse("7").is_err());
    }
}
