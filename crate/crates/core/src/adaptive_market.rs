//! Adaptively growing market.
//!
//! Stage `k` runs a fee market for `T(k)` arrivals with precision
//! `alpha / 2^k`, failure probability `gamma / 2^k` and the matching
//! `lambda_star`; the fee stays `alpha`. `T(1) = ceil(9 A (ln A D)^2)` with
//! `A' = B1 8 sqrt2 d / (alpha eps)`, `A = 16 A' / alpha`, `D = 4 d / gamma`,
//! and `T(k) = 4 T(k-1)`. When a stage fills, the next one opens at a state
//! whose prices match the last published prices (clamped away from zero).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost_function::{clamp_prices, default_clamp_margin, CostKind, PriceVector, ScaledCost, SharesVector};
use crate::error::{invalid_param, Result};
use crate::fee_market::{ceil_log2_wide, drive, lambda_star_wide, ArrivalStream, Ledger, MarketParams, MarketSession};
use crate::noise_schedule::NoiseMode;

/// `9 A (ln A D)^2`, past which `T >= A (ln T D)^2` holds for every larger `T`.
pub fn minimal_t(a: f64, d: f64) -> Result<f64> {
    if !(a.is_finite() && d.is_finite() && a >= 1.0 && d >= 1.0) {
        return Err(invalid_param(format!("need A >= 1 and D >= 1, got A = {a}, D = {d}")));
    }
    if a * d < 5.0 {
        return Err(invalid_param(format!("need A D >= 5, got {}", a * d)));
    }
    Ok(9.0 * a * (a * d).ln().powi(2))
}

/// Closed-form designer budget of the adaptive market:
/// `B1 (72 sqrt2 d / (alpha eps)) (ln(4608 B1 sqrt2 d^2 / (gamma alpha^2 eps)))^2`.
pub fn budget_bound(base_loss: f64, d: usize, alpha: f64, gamma: f64, epsilon: f64) -> Result<f64> {
    check_globals(base_loss, d, alpha, gamma, epsilon)?;
    let df = d as f64;
    let sqrt2 = std::f64::consts::SQRT_2;
    let inner = 4608.0 * base_loss * sqrt2 * df * df / (gamma * alpha * alpha * epsilon);
    Ok(base_loss * 72.0 * sqrt2 * df / (alpha * epsilon) * inner.ln().powi(2))
}

fn check_globals(base_loss: f64, d: usize, alpha: f64, gamma: f64, epsilon: f64) -> Result<()> {
    if !(base_loss.is_finite() && base_loss > 0.0) {
        return Err(invalid_param(format!("B1 must be positive, got {base_loss}")));
    }
    if d == 0 {
        return Err(invalid_param("security count d must be at least 1"));
    }
    for (name, v) in [("alpha", alpha), ("gamma", gamma)] {
        if !(v.is_finite() && v > 0.0 && v < 1.0) {
            return Err(invalid_param(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageParams {
    pub k: u32,
    pub horizon: u128,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSchedule {
    pub base_loss: f64,
    pub d: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// `A' = B1 8 sqrt2 d / (alpha eps)`.
    pub a_prime: f64,
    /// `A = 16 A' / alpha`.
    pub a: f64,
    /// `D = 4 d / gamma`.
    pub d_const: f64,
    /// Real-valued `9 A (ln A D)^2`.
    pub first_horizon_exact: f64,
    /// Whether `T(1)` was replaced by a desk-scale override.
    pub overridden: bool,
    pub stages: Vec<StageParams>,
}

pub fn stage_schedule(
    base_loss: f64,
    d: usize,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    max_stages: u32,
) -> Result<StageSchedule> {
    build_schedule(base_loss, d, alpha, gamma, epsilon, max_stages, None)
}

/// Schedule with `T(1)` replaced by `first_horizon`; later stages still quadruple.
pub fn stage_schedule_with_override(
    base_loss: f64,
    d: usize,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    max_stages: u32,
    first_horizon: u128,
) -> Result<StageSchedule> {
    if first_horizon < 2 {
        return Err(invalid_param(format!("stage override must be at least 2, got {first_horizon}")));
    }
    build_schedule(base_loss, d, alpha, gamma, epsilon, max_stages, Some(first_horizon))
}

fn build_schedule(
    base_loss: f64,
    d: usize,
    alpha: f64,
    gamma: f64,
    epsilon: f64,
    max_stages: u32,
    first_override: Option<u128>,
) -> Result<StageSchedule> {
    check_globals(base_loss, d, alpha, gamma, epsilon)?;
    if max_stages == 0 {
        return Err(invalid_param("need at least one stage"));
    }
    let df = d as f64;
    let a_prime = base_loss * 8.0 * std::f64::consts::SQRT_2 * df / (alpha * epsilon);
    let a = 16.0 * a_prime / alpha;
    let d_const = 4.0 * df / gamma;
    // outside the A D >= 5 regime fall back to the raw formula
    let first_horizon_exact = minimal_t(a, d_const).unwrap_or_else(|_| 9.0 * a * (a * d_const).ln().max(0.0).powi(2));
    let mut schedule = StageSchedule {
        base_loss,
        d,
        alpha,
        gamma,
        epsilon,
        a_prime,
        a,
        d_const,
        first_horizon_exact,
        overridden: first_override.is_some(),
        stages: Vec::new(),
    };
    let first = match first_override {
        Some(t) => t,
        None => (first_horizon_exact.ceil() as u128).max(2),
    };
    for k in 1..=max_stages {
        let p = schedule.stage_from(first, k)?;
        schedule.stages.push(p);
    }
    Ok(schedule)
}

impl StageSchedule {
    pub fn first_horizon(&self) -> u128 {
        self.stages[0].horizon
    }

    fn stage_from(&self, first: u128, k: u32) -> Result<StageParams> {
        let horizon = first
            .checked_mul(4u128.checked_pow(k - 1).ok_or_else(|| invalid_param("stage index too large"))?)
            .ok_or_else(|| invalid_param(format!("T({k}) overflows")))?;
        let scale = 2f64.powi(k as i32);
        let alpha = self.alpha / scale;
        let gamma = self.gamma / scale;
        let lambda = lambda_star_wide(horizon, alpha, gamma, self.epsilon, self.d)?;
        Ok(StageParams { k, horizon, alpha, gamma, lambda })
    }

    /// Parameters of stage `k`, computed past the stored stages if needed.
    pub fn stage(&self, k: u32) -> Result<StageParams> {
        if k == 0 {
            return Err(invalid_param("stages are numbered from 1"));
        }
        match self.stages.get(k as usize - 1) {
            Some(p) => Ok(*p),
            None => self.stage_from(self.first_horizon(), k),
        }
    }

    /// `T(1)` through the fully expanded closed form
    /// `B1 1152 sqrt2 d (ln(4608 B1 sqrt2 d^2 / (gamma alpha^2 eps)))^2 / (alpha^2 eps)`.
    pub fn expanded_first_horizon(&self) -> f64 {
        let df = self.d as f64;
        let sqrt2 = std::f64::consts::SQRT_2;
        let inner = 4608.0 * self.base_loss * sqrt2 * df * df / (self.gamma * self.alpha.powi(2) * self.epsilon);
        self.base_loss * 1152.0 * sqrt2 * df * inner.ln().powi(2) / (self.alpha.powi(2) * self.epsilon)
    }

    /// Sums of the per-stage precision and failure budgets.
    pub fn budget_sums(&self) -> (f64, f64) {
        self.stages
            .iter()
            .fold((0.0, 0.0), |(a, g), s| (a + s.alpha, g + s.gamma))
    }

    pub fn precision_budget_ok(&self) -> bool {
        let (a, g) = self.budget_sums();
        a <= self.alpha && g <= self.gamma
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCheck {
    pub k: u32,
    pub horizon: f64,
    pub lambda: f64,
    /// `B1 / lambda(k)`.
    pub loss_lhs: f64,
    /// `(alpha / 16) T(k)`.
    pub loss_rhs: f64,
    pub loss_ok: bool,
    /// `1 - log2 T(k) / (4 2^k sqrt(d) ln(2 d T(k) 2^k / gamma)) - 1/16`.
    pub profit_bracket: f64,
    pub profit_ok: bool,
    /// `lambda(k-1) / lambda(k)`; the growth chain needs it at most 4.
    pub lambda_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageInequalityReport {
    pub stages: Vec<StageCheck>,
    /// `log2 T(1) / (8 ln(4 T(1)))`, required at most 1/4.
    pub first_stage_fraction: f64,
    pub first_stage_ok: bool,
    /// Smallest `k` from which `1/lambda(k) <= 4/lambda(k-1)` holds through `k_max`.
    pub chain_holds_from: Option<u32>,
    pub all_passed: bool,
}

pub fn verify_stage_inequalities(schedule: &StageSchedule, k_max: u32) -> Result<StageInequalityReport> {
    if k_max == 0 {
        return Err(invalid_param("k_max must be at least 1"));
    }
    let df = schedule.d as f64;
    let mut checks = Vec::with_capacity(k_max as usize);
    let mut prev_lambda = None;
    for k in 1..=k_max {
        let s = schedule.stage(k)?;
        let t = s.horizon as f64;
        let loss_lhs = schedule.base_loss / s.lambda;
        let loss_rhs = schedule.alpha / 16.0 * t;
        let two_k = 2f64.powi(k as i32);
        let log2_t = ceil_log2_exactish(s.horizon);
        let frac = log2_t / (4.0 * two_k * df.sqrt() * (2.0 * df * t * two_k / schedule.gamma).ln());
        let profit_bracket = 1.0 - frac - 1.0 / 16.0;
        let lambda_ratio = prev_lambda.map(|p: f64| p / s.lambda);
        prev_lambda = Some(s.lambda);
        checks.push(StageCheck {
            k,
            horizon: t,
            lambda: s.lambda,
            loss_lhs,
            loss_rhs,
            loss_ok: loss_lhs <= loss_rhs,
            profit_bracket,
            profit_ok: profit_bracket >= 0.5,
            lambda_ratio,
        });
    }
    let t1 = schedule.first_horizon() as f64;
    let first_stage_fraction = t1.log2() / (8.0 * (4.0 * t1).ln());
    let first_stage_ok = first_stage_fraction <= 0.25;

    let mut chain_holds_from = None;
    for c in checks.iter().rev() {
        match c.lambda_ratio {
            Some(r) if r <= 4.0 => chain_holds_from = Some(c.k),
            Some(_) => break,
            None => {}
        }
    }
    let all_passed = first_stage_ok && checks.iter().all(|c| c.loss_ok && c.profit_ok);
    Ok(StageInequalityReport {
        stages: checks,
        first_stage_fraction,
        first_stage_ok,
        chain_holds_from,
        all_passed,
    })
}

// log2 of a u128 horizon; exact for powers of two
fn ceil_log2_exactish(t: u128) -> f64 {
    if t.is_power_of_two() {
        ceil_log2_wide(t) as f64
    } else {
        (t as f64).log2()
    }
}

/// Opening state of the next stage: prices of the previous stage's last
/// published state, clamped by `eta`, inverted under the next cost.
pub fn transition(prev_prices: &[f64], next_cost: &ScaledCost, eta: f64) -> Result<SharesVector> {
    next_cost.invert_prices(prev_prices, eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptiveOptions {
    pub kind: CostKind,
    pub noise: NoiseMode,
    /// Clamp margin for handoffs; `alpha / (4 d)` when `None`.
    pub eta: Option<f64>,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { kind: CostKind::Lmsr, noise: NoiseMode::Laplace, eta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub k: u32,
    pub horizon: u64,
    pub lambda: f64,
    pub arrivals: u64,
    pub completed: bool,
    pub ledger: Ledger,
    pub opening_prices: PriceVector,
    /// Last published prices before close-out.
    pub final_prices: PriceVector,
    /// Clamped prices the next stage must open at (completed stages only).
    pub handoff_target: Option<PriceVector>,
    pub max_price_gap: f64,
    pub max_share_gap: f64,
    /// Largest l1 gap to the prices of the same trades run without noise.
    pub max_global_price_gap: f64,
    pub mean_bundle_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveOutcome {
    pub global: Ledger,
    pub stages: Vec<StageResult>,
}

impl AdaptiveOutcome {
    pub fn stages_completed(&self) -> usize {
        self.stages.iter().filter(|s| s.completed).count()
    }

    pub fn max_global_price_gap(&self) -> f64 {
        self.stages.iter().map(|s| s.max_global_price_gap).fold(0.0, f64::max)
    }
}

/// Noise substream for stage `k` (stage 1 shares the single-market stream).
pub fn stage_noise_stream(k: u32) -> u64 {
    crate::fee_market::NOISE_STREAM + u64::from(k - 1)
}

/// Run stages until the stream ends or the schedule is exhausted, settling
/// every stage on `payoff`.
pub fn run_adaptive(
    schedule: &StageSchedule,
    stream: &mut dyn ArrivalStream,
    payoff: &[f64],
    seed: u64,
    options: AdaptiveOptions,
) -> Result<AdaptiveOutcome> {
    let d = schedule.d;
    let eta = options.eta.unwrap_or_else(|| default_clamp_margin(schedule.alpha, d));
    let mut global = Ledger::default();
    let mut results = Vec::new();
    let mut opening = SharesVector::zeros(d);
    let mut shadow = SharesVector::zeros(d);

    for stage in &schedule.stages {
        let horizon = u64::try_from(stage.horizon)
            .map_err(|_| invalid_param(format!("T({}) = {} is too large to simulate", stage.k, stage.horizon)))?;
        let params = MarketParams {
            d,
            epsilon: schedule.epsilon,
            alpha: stage.alpha,
            gamma: stage.gamma,
            horizon,
            fee: schedule.alpha,
            lambda: stage.lambda,
            noise: options.noise,
            allow_unsafe_lambda: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stage_noise_stream(stage.k));
        let mut session = MarketSession::open_at(params, options.kind, rng, opening.clone())?;
        let opening_prices = session.current_prices().clone();

        drive(&mut session, stream)?;

        let cost = *session.cost();
        let mut max_global_price_gap: f64 = 0.0;
        for r in session.trace() {
            shadow.add_assign(&r.trade);
            let p = cost.prices(&shadow)?;
            max_global_price_gap = max_global_price_gap.max(r.published_prices.l1_distance(&p));
        }
        let final_prices = session.current_prices().clone();
        let completed = session.is_full();
        let ledger = session.close_with_payoff(payoff)?;
        global.accumulate(&ledger);

        let more = completed && !stream.exhausted() && stage.k < schedule.stages.len() as u32;
        let mut handoff_target = None;
        if more {
            let next = schedule.stage(stage.k + 1)?;
            let next_cost = ScaledCost::new(options.kind, d, next.lambda)?;
            handoff_target = Some(clamp_prices(&final_prices, eta)?);
            opening = transition(&final_prices, &next_cost, eta)?;
            let shadow_prices = cost.prices(&shadow)?;
            shadow = transition(&shadow_prices, &next_cost, eta)?;
        }
        results.push(StageResult {
            k: stage.k,
            horizon,
            lambda: stage.lambda,
            arrivals: session.t(),
            completed,
            ledger,
            opening_prices,
            final_prices,
            handoff_target,
            max_price_gap: session.max_price_gap(),
            max_share_gap: session.max_share_gap(),
            max_global_price_gap,
            mean_bundle_l2: session.noise().mean_bundle_l2(),
        });
        if !more {
            break;
        }
    }
    Ok(AdaptiveOutcome { global, stages: results })
}
