//! Trader strategies.
//!
//! Strategies only see what the market publishes: their own past trades,
//! the published states and prices, the fee and the cost parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_function::{PriceVector, ScaledCost, SharesVector, NORM_SLACK};
use crate::error::{invalid_param, MarketError, Result};

/// Everything a trader may condition on before step `t`.
#[derive(Debug, Clone, Copy)]
pub struct StrategyContext<'a> {
    /// Index of the step the trader would fill.
    pub t: u64,
    pub own_trades: &'a [SharesVector],
    /// Published states `qhat^0 .. qhat^(t-1)`.
    pub published_states: &'a [SharesVector],
    pub published_prices: &'a [PriceVector],
    pub fee: f64,
    pub cost: &'a ScaledCost,
}

impl StrategyContext<'_> {
    pub fn current_state(&self) -> &SharesVector {
        self.published_states
            .last()
            .expect("context carries at least the initial published state")
    }

    pub fn current_prices(&self) -> &PriceVector {
        self.published_prices
            .last()
            .expect("context carries at least the initial published prices")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Trade(SharesVector),
    Abstain,
}

impl Decision {
    pub fn bundle(&self) -> Option<&SharesVector> {
        match self {
            Decision::Trade(b) => Some(b),
            Decision::Abstain => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub decision: Decision,
    /// Best candidate bundle found, whether or not it clears the fee.
    pub candidate: Option<SharesVector>,
    /// Expected profit of the candidate under the belief, before the fee.
    pub expected_profit: f64,
}

const TIE_TOL: f64 = 1e-9;
const LINE_SEARCH_STEPS: usize = 60;

/// Expected profit of `dq` bought at `q_hat` under `belief`, before fees.
pub fn expected_profit(cost: &ScaledCost, q_hat: &[f64], belief: &[f64], dq: &[f64]) -> Result<f64> {
    let gain: f64 = dq.iter().zip(belief).map(|(a, b)| a * b).sum();
    Ok(gain - cost.trade_cost(q_hat, dq)?)
}

/// Size in `[0, 1]` of the best trade along `sign * e_j`; the profit is
/// concave in the size, so it is found where the marginal price meets the belief.
fn line_search(cost: &ScaledCost, q_hat: &[f64], belief: f64, j: usize, sign: f64) -> Result<f64> {
    let marginal = |s: f64| -> Result<f64> {
        let mut q = q_hat.to_vec();
        q[j] += sign * s;
        Ok(sign * (belief - cost.prices(&q)?[j]))
    };
    if marginal(0.0)? <= 0.0 {
        return Ok(0.0);
    }
    if marginal(1.0)? >= 0.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..LINE_SEARCH_STEPS {
        let mid = 0.5 * (lo + hi);
        if marginal(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Best signed single-coordinate trade against `q_hat` for a trader holding
/// `belief`; trades only if its expected profit exceeds `fee`.
///
/// Ties go to the lowest coordinate, then to buying over selling.
pub fn best_response(cost: &ScaledCost, q_hat: &[f64], belief: &PriceVector, fee: f64) -> Result<BestResponse> {
    belief.validate_distribution(1e-9)?;
    let d = cost.d();
    if belief.dim() != d || q_hat.len() != d {
        return Err(invalid_param(format!("belief and state must have {d} coordinates")));
    }
    let mut best: Option<(f64, SharesVector)> = None;
    for j in 0..d {
        for sign in [1.0, -1.0] {
            let size = line_search(cost, q_hat, belief[j], j, sign)?;
            if size <= 0.0 {
                continue;
            }
            let mut dq = vec![0.0; d];
            dq[j] = sign * size;
            let profit = expected_profit(cost, q_hat, belief, &dq)?;
            let better = match &best {
                None => true,
                Some((b, _)) => profit > *b + TIE_TOL,
            };
            if better {
                best = Some((profit, SharesVector::new(dq)));
            }
        }
    }
    Ok(match best {
        Some((profit, dq)) if profit > fee => BestResponse {
            decision: Decision::Trade(dq.clone()),
            candidate: Some(dq),
            expected_profit: profit,
        },
        Some((profit, dq)) => BestResponse {
            decision: Decision::Abstain,
            candidate: Some(dq),
            expected_profit: profit,
        },
        None => BestResponse {
            decision: Decision::Abstain,
            candidate: None,
            expected_profit: 0.0,
        },
    })
}

/// Built-in strategy families, addressable by name from run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    /// Best-responds against a fixed private belief.
    Belief { belief: Vec<f64> },
    /// Trades whenever published prices stray from its belief by more than
    /// `threshold` in l-infinity (defaults to the market fee).
    ArbitrageHunter {
        belief: Vec<f64>,
        #[serde(default)]
        threshold: Option<f64>,
    },
    /// Always buys one unit of `coordinate`.
    Herd { coordinate: usize },
    /// Uniformly random signed unit trades.
    Random,
    Abstainer,
}

impl StrategyConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StrategyConfig::Belief { .. } => "belief",
            StrategyConfig::ArbitrageHunter { .. } => "arbitrage_hunter",
            StrategyConfig::Herd { .. } => "herd",
            StrategyConfig::Random => "random",
            StrategyConfig::Abstainer => "abstainer",
        }
    }

    /// Default parameters for a kind given by name.
    pub fn from_kind(kind: &str, d: usize) -> Result<Self> {
        let uniform = vec![1.0 / d as f64; d];
        match kind {
            "belief" => Ok(StrategyConfig::Belief { belief: uniform }),
            "arbitrage_hunter" => Ok(StrategyConfig::ArbitrageHunter { belief: uniform, threshold: None }),
            "herd" => Ok(StrategyConfig::Herd { coordinate: 0 }),
            "random" => Ok(StrategyConfig::Random),
            "abstainer" => Ok(StrategyConfig::Abstainer),
            other => Err(invalid_param(format!("unknown strategy kind `{other}`"))),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            StrategyConfig::Belief { belief } | StrategyConfig::ArbitrageHunter { belief, .. } => {
                if belief.len() != d {
                    return Err(invalid_param(format!(
                        "belief has {} coordinates, market has {d}",
                        belief.len()
                    )));
                }
                PriceVector::new(belief.clone()).validate_distribution(1e-9)?;
                if let StrategyConfig::ArbitrageHunter { threshold: Some(th), .. } = self {
                    if !(th.is_finite() && *th >= 0.0) {
                        return Err(invalid_param(format!("threshold must be non-negative, got {th}")));
                    }
                }
                Ok(())
            }
            StrategyConfig::Herd { coordinate } if *coordinate >= d => Err(invalid_param(format!(
                "herd coordinate {coordinate} out of range for d = {d}"
            ))),
            _ => Ok(()),
        }
    }
}

pub trait Strategy: Send {
    fn name(&self) -> &'static str;
    fn decide(&mut self, ctx: &StrategyContext<'_>) -> Result<Decision>;
}

struct BeliefTrader {
    belief: PriceVector,
}

impl Strategy for BeliefTrader {
    fn name(&self) -> &'static str {
        "belief"
    }

    fn decide(&mut self, ctx: &StrategyContext<'_>) -> Result<Decision> {
        Ok(best_response(ctx.cost, ctx.current_state(), &self.belief, ctx.fee)?.decision)
    }
}

struct ArbitrageHunter {
    belief: PriceVector,
    threshold: Option<f64>,
}

impl Strategy for ArbitrageHunter {
    fn name(&self) -> &'static str {
        "arbitrage_hunter"
    }

    fn decide(&mut self, ctx: &StrategyContext<'_>) -> Result<Decision> {
        let threshold = self.threshold.unwrap_or(ctx.fee);
        if self.belief.linf_distance(ctx.current_prices()) <= threshold {
            return Ok(Decision::Abstain);
        }
        // fee is sunk once the gap is judged worth it
        Ok(best_response(ctx.cost, ctx.current_state(), &self.belief, 0.0)?.decision)
    }
}

struct Herd {
    bundle: SharesVector,
}

impl Strategy for Herd {
    fn name(&self) -> &'static str {
        "herd"
    }

    fn decide(&mut self, _ctx: &StrategyContext<'_>) -> Result<Decision> {
        Ok(Decision::Trade(self.bundle.clone()))
    }
}

struct RandomTrader {
    d: usize,
    rng: ChaCha8Rng,
}

impl Strategy for RandomTrader {
    fn name(&self) -> &'static str {
        "random"
    }

    fn decide(&mut self, _ctx: &StrategyContext<'_>) -> Result<Decision> {
        let j = self.rng.random_range(0..self.d);
        let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut v = vec![0.0; self.d];
        v[j] = sign;
        Ok(Decision::Trade(SharesVector::new(v)))
    }
}

struct Abstainer;

impl Strategy for Abstainer {
    fn name(&self) -> &'static str {
        "abstainer"
    }

    fn decide(&mut self, _ctx: &StrategyContext<'_>) -> Result<Decision> {
        Ok(Decision::Abstain)
    }
}

pub fn make_strategy(strategy: &StrategyConfig, d: usize, rng: ChaCha8Rng) -> Result<Box<dyn Strategy>> {
    strategy.validate(d)?;
    Ok(match strategy {
        StrategyConfig::Belief { belief } => Box::new(BeliefTrader {
            belief: PriceVector::new(belief.clone()),
        }),
        StrategyConfig::ArbitrageHunter { belief, threshold } => Box::new(ArbitrageHunter {
            belief: PriceVector::new(belief.clone()),
            threshold: *threshold,
        }),
        StrategyConfig::Herd { coordinate } => Box::new(Herd {
            bundle: SharesVector::unit(d, *coordinate),
        }),
        StrategyConfig::Random => Box::new(RandomTrader { d, rng }),
        StrategyConfig::Abstainer => Box::new(Abstainer),
    })
}

/// Ask a strategy for its move and police the result.
pub fn step_strategy(strategy: &mut dyn Strategy, ctx: &StrategyContext<'_>) -> Result<Decision> {
    let decision = strategy.decide(ctx)?;
    if let Decision::Trade(dq) = &decision {
        let d = ctx.cost.d();
        if dq.dim() != d || !dq.is_finite() {
            return Err(MarketError::StrategyBug(format!(
                "{} produced a malformed bundle {:?}",
                strategy.name(),
                dq
            )));
        }
        let norm = dq.l1_norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(MarketError::StrategyBug(format!(
                "{} produced a bundle with l1 norm {norm}",
                strategy.name()
            )));
        }
    }
    Ok(decision)
}
