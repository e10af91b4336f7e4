//! Transaction-fee private market.
//!
//! Each arrival pays a flat fee, then trades against the published (noisy)
//! state. The noise trader then sells the bundles the binary counter retires
//! and buys a fresh Laplace bundle. At close the noise trader sells back
//! everything it still holds and participants are paid on the outcome.
//!
//! The ledger splits the designer's loss into the cost-function market
//! maker's loss against every trader (participants and noise trader), the
//! noise trader's net payments, and fee revenue:
//! `designer_loss = mm_loss + ntl - fees`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost_function::{CostKind, OutcomeModel, PriceVector, ScaledCost, SharesVector, NORM_SLACK};
use crate::error::{invalid_param, invalid_state, MarketError, Result};
use crate::noise_schedule::{ceil_log2, noise_scale, total_holding_gap, tree_depth, NoiseLedger, NoiseMode};

/// Substream of a seed reserved for the noise trader.
pub const NOISE_STREAM: u64 = 0;

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0 && v < 1.0) {
        return Err(invalid_param(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid_param(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Price sensitivity sufficient for `(alpha, gamma)` precision:
/// `alpha eps / (4 sqrt2 d ceil(log2 T) ln(2 T d / gamma))`.
pub fn lambda_star(horizon: u64, alpha: f64, gamma: f64, epsilon: f64, d: usize) -> Result<f64> {
    lambda_star_wide(horizon as u128, alpha, gamma, epsilon, d)
}

pub(crate) fn ceil_log2_wide(t: u128) -> u32 {
    if t <= 1 {
        0
    } else {
        128 - (t - 1).leading_zeros()
    }
}

/// `lambda_star` for horizons beyond `u64`, as produced by late adaptive stages.
pub fn lambda_star_wide(horizon: u128, alpha: f64, gamma: f64, epsilon: f64, d: usize) -> Result<f64> {
    if horizon < 2 {
        return Err(invalid_param(format!("lambda_star needs T >= 2, got {horizon}")));
    }
    check_unit_interval("alpha", alpha)?;
    check_unit_interval("gamma", gamma)?;
    check_positive("epsilon", epsilon)?;
    if d == 0 {
        return Err(invalid_param("security count d must be at least 1"));
    }
    let depth = ceil_log2_wide(horizon) as f64;
    let t = horizon as f64;
    let df = d as f64;
    Ok(alpha * epsilon
        / (4.0 * std::f64::consts::SQRT_2 * df * depth * (2.0 * t * df / gamma).ln()))
}

/// Analytic bound on `K = E ||z||_2`: `2 sqrt(2d) depth / eps`.
pub fn noise_scale_k(horizon: u64, epsilon: f64, d: usize) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    if horizon == 0 || d == 0 {
        return Err(invalid_param("horizon and d must be at least 1"));
    }
    Ok(2.0 * (2.0 * d as f64).sqrt() * tree_depth(horizon) as f64 / epsilon)
}

/// High-probability bound on `max_t ||q^t - qhat^t||_1`:
/// `(4 sqrt2 d ceil(log2 T) / eps) ln(2 T d / gamma)`.
pub fn share_accuracy_bound(d: usize, horizon: u64, epsilon: f64, gamma: f64) -> Result<f64> {
    check_positive("epsilon", epsilon)?;
    check_unit_interval("gamma", gamma)?;
    if horizon == 0 || d == 0 {
        return Err(invalid_param("horizon and d must be at least 1"));
    }
    let df = d as f64;
    let depth = tree_depth(horizon) as f64;
    Ok(4.0 * std::f64::consts::SQRT_2 * df * depth / epsilon
        * (2.0 * horizon as f64 * df / gamma).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBounds {
    /// `(T' log2 T' / 2) lambda K`.
    pub ntl_bound: f64,
    /// `lambda K` times the exact number of arrivals each bundle is exposed to,
    /// counting close-out sales.
    pub ntl_bound_exact: f64,
    /// `B1 / lambda + T' (K log2 T' lambda - c)`.
    pub wc_bound: f64,
}

pub fn loss_bounds(lambda: f64, arrivals: u64, k: f64, fee: f64, base_loss: f64) -> LossBounds {
    let tp = arrivals as f64;
    let log_tp = if arrivals > 0 { tp.log2() } else { 0.0 };
    LossBounds {
        ntl_bound: tp * log_tp / 2.0 * lambda * k,
        ntl_bound_exact: total_holding_gap(arrivals) as f64 * lambda * k,
        wc_bound: base_loss / lambda + tp * (k * log_tp * lambda - fee),
    }
}

/// Whether `lambda <= c eps / (2 sqrt(2d) ceil(log2 T) log2 T)`, the fee
/// condition that keeps the worst case at `B1 / lambda`.
pub fn sufficient_fee_holds(lambda: f64, fee: f64, horizon: u64, epsilon: f64, d: usize) -> bool {
    if horizon < 2 {
        return true;
    }
    let depth = ceil_log2(horizon) as f64;
    let limit = fee * epsilon / (2.0 * (2.0 * d as f64).sqrt() * depth * (horizon as f64).log2());
    lambda <= limit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub d: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Maximum number of arrivals `T`.
    pub horizon: u64,
    pub fee: f64,
    pub lambda: f64,
    pub noise: NoiseMode,
    /// Permit `lambda` above `lambda_star` or at least `alpha`.
    pub allow_unsafe_lambda: bool,
}

impl MarketParams {
    /// Defaults: fee `alpha`, `lambda = lambda_star`, Laplace noise.
    pub fn new(d: usize, epsilon: f64, alpha: f64, gamma: f64, horizon: u64) -> Result<Self> {
        let lambda = lambda_star(horizon, alpha, gamma, epsilon, d)?;
        let p = Self {
            d,
            epsilon,
            alpha,
            gamma,
            horizon,
            fee: alpha,
            lambda,
            noise: NoiseMode::Laplace,
            allow_unsafe_lambda: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_fee(mut self, fee: f64) -> Self {
        self.fee = fee;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn allowing_unsafe_lambda(mut self) -> Self {
        self.allow_unsafe_lambda = true;
        self
    }

    pub fn lambda_star(&self) -> Result<f64> {
        lambda_star(self.horizon, self.alpha, self.gamma, self.epsilon, self.d)
    }

    pub fn noise_scale(&self) -> Result<f64> {
        noise_scale(self.horizon, self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid_param("security count d must be at least 1"));
        }
        check_positive("epsilon", self.epsilon)?;
        check_unit_interval("alpha", self.alpha)?;
        check_unit_interval("gamma", self.gamma)?;
        if self.horizon < 2 {
            return Err(invalid_param(format!("horizon T must be at least 2, got {}", self.horizon)));
        }
        if !(self.fee.is_finite() && self.fee >= 0.0) {
            return Err(invalid_param(format!("fee must be non-negative, got {}", self.fee)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(invalid_param(format!(
                "lambda must lie in (0, 1], got {}",
                self.lambda
            )));
        }
        if !self.allow_unsafe_lambda {
            let star = self.lambda_star()?;
            // relative slack so a lambda_star recomputed elsewhere still passes
            if self.lambda > star * (1.0 + 1e-12) {
                return Err(invalid_param(format!(
                    "lambda = {} exceeds lambda_star = {star}; set the unsafe override to run it",
                    self.lambda
                )));
            }
            if self.lambda >= self.alpha {
                return Err(invalid_param(format!(
                    "lambda = {} must be below alpha = {}",
                    self.lambda, self.alpha
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub trade: SharesVector,
    pub payment: f64,
    pub fee: f64,
    /// Net charge to the noise trader at this step (sells and purchase).
    pub noise_payment: f64,
    pub sold: Vec<u64>,
    pub published_state: SharesVector,
    pub true_prices: PriceVector,
    pub published_prices: PriceVector,
    pub price_gap_l1: f64,
    pub share_gap_l1: f64,
}

/// Money flows of one market, split for the budget identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ledger {
    /// Loss of the cost-function market maker against all traders.
    pub mm_loss: f64,
    /// Net payments made by the noise trader.
    pub ntl: f64,
    pub fees: f64,
    /// Payoffs owed to participants minus everything they paid.
    pub designer_loss: f64,
    pub participant_payments: f64,
    pub participant_payoffs: f64,
    pub arrivals: u64,
}

impl Ledger {
    /// `designer_loss - (mm_loss + ntl - fees)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.designer_loss - (self.mm_loss + self.ntl - self.fees)
    }

    pub fn accumulate(&mut self, other: &Ledger) {
        self.mm_loss += other.mm_loss;
        self.ntl += other.ntl;
        self.fees += other.fees;
        self.designer_loss += other.designer_loss;
        self.participant_payments += other.participant_payments;
        self.participant_payoffs += other.participant_payoffs;
        self.arrivals += other.arrivals;
    }
}

fn consistency_tol(scale: f64) -> f64 {
    1e-9 * (1.0 + scale.abs())
}

/// One transaction-fee private market.
#[derive(Debug, Clone)]
pub struct MarketSession {
    params: MarketParams,
    cost: ScaledCost,
    initial: SharesVector,
    q_true: SharesVector,
    q_hat: SharesVector,
    noise: NoiseLedger,
    t: u64,
    trades: Vec<SharesVector>,
    trace: Vec<StepRecord>,
    published: Vec<SharesVector>,
    published_prices: Vec<PriceVector>,
    participant_payments: f64,
    noise_payments: f64,
    fees: f64,
    closed: bool,
    ledger: Option<Ledger>,
}

impl MarketSession {
    /// Fresh market at the zero state, noise drawn from `seed`'s noise substream.
    pub fn open(params: MarketParams, kind: CostKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM);
        let d = params.d;
        Self::open_at(params, kind, rng, SharesVector::zeros(d))
    }

    /// Market whose true and published states both start at `initial`.
    pub fn open_at(
        params: MarketParams,
        kind: CostKind,
        noise_rng: ChaCha8Rng,
        initial: SharesVector,
    ) -> Result<Self> {
        params.validate()?;
        let cost = ScaledCost::new(kind, params.d, params.lambda)?;
        if initial.dim() != params.d || !initial.is_finite() {
            return Err(invalid_param(format!(
                "initial state must be a finite vector of length {}",
                params.d
            )));
        }
        let noise = NoiseLedger::for_horizon(params.d, params.horizon, params.epsilon, params.noise, noise_rng)?;
        let p0 = cost.prices(&initial)?;
        Ok(Self {
            cost,
            q_true: initial.clone(),
            q_hat: initial.clone(),
            published: vec![initial.clone()],
            published_prices: vec![p0],
            initial,
            noise,
            t: 0,
            trades: Vec::new(),
            trace: Vec::new(),
            participant_payments: 0.0,
            noise_payments: 0.0,
            fees: 0.0,
            closed: false,
            ledger: None,
            params,
        })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn cost(&self) -> &ScaledCost {
        &self.cost
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_full(&self) -> bool {
        self.t >= self.params.horizon
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn initial_state(&self) -> &SharesVector {
        &self.initial
    }

    pub fn true_state(&self) -> &SharesVector {
        &self.q_true
    }

    pub fn published_state(&self) -> &SharesVector {
        &self.q_hat
    }

    /// Published states `qhat^0 .. qhat^t`.
    pub fn published_states(&self) -> &[SharesVector] {
        &self.published
    }

    pub fn published_prices(&self) -> &[PriceVector] {
        &self.published_prices
    }

    pub fn current_prices(&self) -> &PriceVector {
        self.published_prices.last().expect("initial prices are always recorded")
    }

    pub fn trades(&self) -> &[SharesVector] {
        &self.trades
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn noise(&self) -> &NoiseLedger {
        &self.noise
    }

    pub fn ledger(&self) -> Option<&Ledger> {
        self.ledger.as_ref()
    }

    pub fn max_price_gap(&self) -> f64 {
        self.trace.iter().map(|r| r.price_gap_l1).fold(0.0, f64::max)
    }

    pub fn max_share_gap(&self) -> f64 {
        self.trace.iter().map(|r| r.share_gap_l1).fold(0.0, f64::max)
    }

    /// Process one arrival.
    pub fn step(&mut self, dq: &SharesVector) -> Result<StepRecord> {
        if self.closed {
            return Err(invalid_state("market already closed"));
        }
        if self.is_full() {
            return Err(MarketError::MarketClosed { horizon: self.params.horizon });
        }
        if dq.dim() != self.params.d || !dq.is_finite() {
            return Err(invalid_param(format!(
                "trade must be a finite vector of length {}",
                self.params.d
            )));
        }
        let norm = dq.l1_norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(MarketError::TradeRejected { norm });
        }

        let fee = self.params.fee;
        let payment = self.cost.trade_cost(&self.q_hat, dq)?;
        self.q_hat.add_assign(dq);

        let noise_step = self.noise.advance()?;
        let mut noise_payment = 0.0;
        let mut sold = Vec::with_capacity(noise_step.sells.len());
        for (s, z) in &noise_step.sells {
            let before = self.cost.cost(&self.q_hat)?;
            self.q_hat.sub_assign(z);
            let charge = self.cost.cost(&self.q_hat)? - before;
            noise_payment += charge;
            self.noise.record_sale(*s, charge, &self.q_hat)?;
            sold.push(*s);
        }
        let state_before_buy = self.q_hat.clone();
        let buy_charge = self.cost.trade_cost(&self.q_hat, &noise_step.buy)?;
        self.q_hat.add_assign(&noise_step.buy);
        self.noise.record_purchase(noise_step.t, buy_charge, &state_before_buy)?;
        noise_payment += buy_charge;

        self.q_true.add_assign(dq);
        self.t += 1;
        self.fees += fee;
        self.participant_payments += payment;
        self.noise_payments += noise_payment;
        self.trades.push(dq.clone());

        self.check_state_identity()?;

        let true_prices = self.cost.prices(&self.q_true)?;
        let published_prices = self.cost.prices(&self.q_hat)?;
        let price_gap_l1 = true_prices.l1_distance(&published_prices);
        let share_gap_l1 = self.q_true.minus(&self.q_hat).l1_norm();
        self.published.push(self.q_hat.clone());
        self.published_prices.push(published_prices.clone());
        let record = StepRecord {
            t: self.t,
            trade: dq.clone(),
            payment,
            fee,
            noise_payment,
            sold,
            published_state: self.q_hat.clone(),
            true_prices,
            published_prices,
            price_gap_l1,
            share_gap_l1,
        };
        self.trace.push(record.clone());
        Ok(record)
    }

    /// `qhat - q` must equal the sum of held noise bundles.
    fn check_state_identity(&self) -> Result<()> {
        let held = self.noise.held_sum();
        for ((h, q), z) in self.q_hat.iter().zip(self.q_true.iter()).zip(&held) {
            let gap = h - q;
            if (gap - z).abs() > consistency_tol(h.abs() + q.abs() + z.abs()) {
                return Err(invalid_state(format!(
                    "published minus true state {gap} differs from held noise {z} at t = {}",
                    self.t
                )));
            }
        }
        Ok(())
    }

    /// Close on a realized outcome of `outcomes`.
    pub fn close(&mut self, outcomes: &OutcomeModel, outcome: usize) -> Result<Ledger> {
        let phi = outcomes.payoff(outcome)?.to_vec();
        self.close_with_payoff(&phi)
    }

    /// Close with an explicit payoff vector (a realized `phi(z)` or an
    /// expected payoff under some outcome distribution).
    pub fn close_with_payoff(&mut self, payoff: &[f64]) -> Result<Ledger> {
        if self.closed {
            return Err(invalid_state("market already closed"));
        }
        if payoff.len() != self.params.d || payoff.iter().any(|x| !x.is_finite()) {
            return Err(invalid_param(format!(
                "payoff vector must be finite with length {}",
                self.params.d
            )));
        }

        // close-out: sequential sales, newest first
        let remaining = self.noise.close_out()?;
        let start_state = self.q_hat.clone();
        let start_cost = self.cost.cost(&start_state)?;
        let mut w = vec![0.0; self.params.d];
        let mut sequential = 0.0;
        for (s, z) in &remaining {
            let before = self.cost.cost(&self.q_hat)?;
            self.q_hat.sub_assign(z);
            let charge = self.cost.cost(&self.q_hat)? - before;
            sequential += charge;
            self.noise.record_sale(*s, charge, &self.q_hat)?;
            for (a, v) in w.iter_mut().zip(z) {
                *a += v;
            }
        }
        let batch = self.cost.cost(&start_state.minus(&w))? - start_cost;
        if (batch - sequential).abs() > consistency_tol(start_cost) {
            return Err(invalid_state(format!(
                "close-out charges {sequential} disagree with the batch sale {batch}"
            )));
        }
        self.noise_payments += sequential;

        // after sell-back the published state is the true state
        for (h, q) in self.q_hat.iter().zip(self.q_true.iter()) {
            if (h - q).abs() > consistency_tol(h.abs() + q.abs()) {
                return Err(invalid_state(format!(
                    "published state {:?} did not return to the true state {:?}",
                    self.q_hat, self.q_true
                )));
            }
        }
        let collected = self.participant_payments + self.noise_payments;
        let telescoped = self.cost.cost(&self.q_hat)? - self.cost.cost(&self.initial)?;
        if (collected - telescoped).abs() > consistency_tol(telescoped) {
            return Err(invalid_state(format!(
                "payments {collected} do not telescope to {telescoped}"
            )));
        }

        let participant_payoffs: f64 = self.trades.iter().map(|dq| dq.dot(payoff)).sum();
        let ledger = Ledger {
            mm_loss: participant_payoffs - self.participant_payments - self.noise_payments,
            ntl: self.noise_payments,
            fees: self.fees,
            designer_loss: participant_payoffs - self.participant_payments - self.fees,
            participant_payments: self.participant_payments,
            participant_payoffs,
            arrivals: self.t,
        };
        self.closed = true;
        self.ledger = Some(ledger);
        Ok(ledger)
    }
}

/// Source of arriving trades. Each call is one arrival opportunity; a
/// `None` decision means the opportunity passed without a trade.
pub trait ArrivalStream {
    /// `None` once the stream has ended.
    fn next_trade(&mut self, session: &MarketSession) -> Option<Result<Option<SharesVector>>>;

    /// Called after the trade returned by the last `next_trade` has filled.
    fn filled(&mut self, _trade: &SharesVector) {}

    fn exhausted(&self) -> bool;
}

/// Fixed list of trades, every one of them executed.
#[derive(Debug, Clone)]
pub struct VecStream {
    trades: std::vec::IntoIter<SharesVector>,
}

impl VecStream {
    pub fn new(trades: Vec<SharesVector>) -> Self {
        Self { trades: trades.into_iter() }
    }
}

impl ArrivalStream for VecStream {
    fn next_trade(&mut self, _session: &MarketSession) -> Option<Result<Option<SharesVector>>> {
        self.trades.next().map(|t| Ok(Some(t)))
    }

    fn exhausted(&self) -> bool {
        self.trades.len() == 0
    }
}

/// Feed `stream` into `session` until the market is full or the stream ends.
/// Returns the number of trades executed.
pub fn drive(session: &mut MarketSession, stream: &mut dyn ArrivalStream) -> Result<u64> {
    let mut executed = 0;
    while !session.is_full() {
        match stream.next_trade(session) {
            None => break,
            Some(Err(e)) => return Err(e),
            Some(Ok(None)) => {}
            Some(Ok(Some(dq))) => {
                session.step(&dq)?;
                stream.filled(&dq);
                executed += 1;
            }
        }
    }
    Ok(executed)
}
