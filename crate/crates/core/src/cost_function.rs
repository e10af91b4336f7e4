//! Convex cost-function market maker.
//!
//! The base cost is the logarithmic market scoring rule
//! `C1(q) = ln sum_j exp(q_j)`, whose prices are the softmax of `q` and whose
//! worst-case loss is `ln d`. Liquidity is set by the perspective transform
//! `C(q) = C1(lambda * q) / lambda`, which gives price sensitivity `lambda`
//! and worst-case loss `ln d / lambda`.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, invalid_state, MarketError, Result};

/// Tolerance used when checking that a bundle respects the unit l1 cap.
pub const NORM_SLACK: f64 = 1e-12;

/// Share quantities, one coordinate per security.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SharesVector(Vec<f64>);

impl SharesVector {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    /// Unit bundle on security `j`.
    pub fn unit(d: usize, j: usize) -> Self {
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn plus(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a + b).collect())
    }

    pub fn minus(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|x| x * s).collect())
    }

    pub fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &[f64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a -= b;
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SharesVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for SharesVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Instantaneous prices, one per security.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn uniform(d: usize) -> Self {
        Self(vec![1.0 / d as f64; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn linf_distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// A belief or price vector: finite, non-negative, summing to one.
    pub fn validate_distribution(&self, tol: f64) -> Result<()> {
        if self.0.is_empty() {
            return Err(invalid_param("empty price vector"));
        }
        if self.0.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid_param(format!(
                "price coordinates must be finite and non-negative: {:?}",
                self.0
            )));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(invalid_param(format!(
                "price coordinates sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PriceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PriceVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Finite outcome space with the payoff vector of each outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    labels: Vec<String>,
    payoffs: Vec<Vec<f64>>,
    d: usize,
}

impl OutcomeModel {
    /// Complete market: outcome `j` pays one unit on security `j`.
    pub fn complete(d: usize) -> Self {
        let labels = (0..d).map(|j| format!("outcome-{j}")).collect();
        let payoffs = (0..d)
            .map(|j| {
                let mut v = vec![0.0; d];
                v[j] = 1.0;
                v
            })
            .collect();
        Self { labels, payoffs, d }
    }

    pub fn new(labels: Vec<String>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() || labels.len() != payoffs.len() {
            return Err(invalid_param(
                "outcome labels and payoff vectors must be non-empty and paired",
            ));
        }
        let d = payoffs[0].len();
        for (label, phi) in labels.iter().zip(&payoffs) {
            if phi.len() != d {
                return Err(invalid_param(format!(
                    "payoff vector for {label} has length {}, expected {d}",
                    phi.len()
                )));
            }
            if phi.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(invalid_param(format!(
                    "payoff vector for {label} leaves [0,1]"
                )));
            }
        }
        Ok(Self { labels, payoffs, d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, outcome: usize) -> Option<&str> {
        self.labels.get(outcome).map(String::as_str)
    }

    pub fn payoff(&self, outcome: usize) -> Result<&[f64]> {
        self.payoffs
            .get(outcome)
            .map(Vec::as_slice)
            .ok_or_else(|| invalid_param(format!("unknown outcome index {outcome}")))
    }

    /// Mean payoff vector under a distribution over outcomes.
    pub fn expected_payoff(&self, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != self.len() {
            return Err(invalid_param(format!(
                "outcome distribution has {} entries, expected {}",
                probs.len(),
                self.len()
            )));
        }
        PriceVector::new(probs.to_vec()).validate_distribution(1e-9)?;
        let mut out = vec![0.0; self.d];
        for (p, phi) in probs.iter().zip(&self.payoffs) {
            for (o, x) in out.iter_mut().zip(phi) {
                *o += p * x;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    #[default]
    Lmsr,
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Lmsr => f.write_str("lmsr"),
        }
    }
}

impl CostKind {
    /// Worst-case loss `B1` of the unscaled cost over `d` securities.
    pub fn base_loss(self, d: usize) -> f64 {
        match self {
            CostKind::Lmsr => (d as f64).ln(),
        }
    }
}

impl FromStr for CostKind {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lmsr" => Ok(CostKind::Lmsr),
            "quadratic" | "hybrid" => Err(MarketError::NotImplemented(format!(
                "cost kind `{s}` is not supported; only lmsr is available"
            ))),
            other => Err(invalid_param(format!("unknown cost kind `{other}`"))),
        }
    }
}

/// Numerically stable `ln sum exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Empirical price sensitivity under the l1 and l2 norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityEstimate {
    /// max ||p(q+u) - p(q)||_1 over unit-l1 perturbations `u`.
    pub l1: f64,
    /// max ||p(q+u) - p(q)||_2 / ||u||_2 over the same perturbations.
    pub l2: f64,
}

/// LMSR with liquidity scaled to price sensitivity `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledCost {
    d: usize,
    lambda: f64,
    kind: CostKind,
}

impl ScaledCost {
    pub fn new(kind: CostKind, d: usize, lambda: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid_param("security count d must be at least 1"));
        }
        if !(lambda.is_finite() && lambda > 0.0 && lambda <= 1.0) {
            return Err(invalid_param(format!(
                "price sensitivity must lie in (0, 1], got {lambda}"
            )));
        }
        Ok(Self { d, lambda, kind })
    }

    pub fn lmsr(d: usize, lambda: f64) -> Result<Self> {
        Self::new(CostKind::Lmsr, d, lambda)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    /// Worst-case loss of the unscaled base cost.
    pub fn base_loss(&self) -> f64 {
        self.kind.base_loss(self.d)
    }

    pub fn worst_case_loss(&self) -> f64 {
        self.base_loss() / self.lambda
    }

    fn check_state(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.d {
            return Err(invalid_state(format!(
                "share vector has {} coordinates, market has {}",
                q.len(),
                self.d
            )));
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(invalid_state(format!("non-finite share vector {q:?}")));
        }
        Ok(())
    }

    fn scaled_state(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|x| self.lambda * x).collect()
    }

    pub fn cost(&self, q: &[f64]) -> Result<f64> {
        self.check_state(q)?;
        match self.kind {
            CostKind::Lmsr => Ok(log_sum_exp(&self.scaled_state(q)) / self.lambda),
        }
    }

    pub fn prices(&self, q: &[f64]) -> Result<PriceVector> {
        self.check_state(q)?;
        match self.kind {
            CostKind::Lmsr => Ok(PriceVector(softmax(&self.scaled_state(q)))),
        }
    }

    /// Money charged for moving the state from `q` to `q + dq`.
    pub fn trade_cost(&self, q: &[f64], dq: &[f64]) -> Result<f64> {
        self.check_state(dq)?;
        let moved: Vec<f64> = q.iter().zip(dq).map(|(a, b)| a + b).collect();
        Ok(self.cost(&moved)? - self.cost(q)?)
    }

    /// Canonical share vector whose prices equal `clamp_prices(p, eta)`.
    ///
    /// LMSR prices are invariant to adding a constant to every coordinate;
    /// the representative returned has its last coordinate fixed at zero.
    pub fn invert_prices(&self, p: &[f64], eta: f64) -> Result<SharesVector> {
        if p.len() != self.d {
            return Err(invalid_param(format!(
                "price vector has {} coordinates, market has {}",
                p.len(),
                self.d
            )));
        }
        let clamped = clamp_prices(p, eta)?;
        match self.kind {
            CostKind::Lmsr => {
                let anchor = clamped[self.d - 1].ln();
                Ok(SharesVector(
                    clamped
                        .iter()
                        .map(|pj| (pj.ln() - anchor) / self.lambda)
                        .collect(),
                ))
            }
        }
    }

    /// Sampled estimate of the price map's Lipschitz constant.
    pub fn numeric_sensitivity(&self, samples: usize, seed: u64) -> SensitivityEstimate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radius = 3.0 / self.lambda;
        let mut est = SensitivityEstimate { l1: 0.0, l2: 0.0 };
        for i in 0..samples {
            // alternate wide states with states near the uniform-price point
            let spread = if i % 2 == 0 { radius } else { 0.25 / self.lambda };
            let q: Vec<f64> = (0..self.d)
                .map(|_| rng.random_range(-spread..=spread))
                .collect();
            let mut u: Vec<f64> = (0..self.d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let n1: f64 = u.iter().map(|x| x.abs()).sum();
            if n1 == 0.0 {
                continue;
            }
            u.iter_mut().for_each(|x| *x /= n1);
            let n2 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let moved: Vec<f64> = q.iter().zip(&u).map(|(a, b)| a + b).collect();
            let (Ok(p0), Ok(p1)) = (self.prices(&q), self.prices(&moved)) else {
                continue;
            };
            let diff: Vec<f64> = p1.iter().zip(p0.iter()).map(|(a, b)| a - b).collect();
            let d1: f64 = diff.iter().map(|x| x.abs()).sum();
            let d2 = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            est.l1 = est.l1.max(d1);
            est.l2 = est.l2.max(d2 / n2);
        }
        est
    }

    /// Prices as the entropy-regularized leader over the simplex:
    /// `argmax_w <w, q> - (1/lambda) sum_j w_j ln w_j`.
    ///
    /// Solved through the Lagrange multiplier of the simplex constraint by
    /// bisection; `iterations` sets the resolution of the search.
    pub fn ftrl_price(&self, q: &[f64], iterations: usize) -> Result<PriceVector> {
        self.check_state(q)?;
        if iterations == 0 {
            return Err(invalid_param("ftrl_price needs at least one iteration"));
        }
        match self.kind {
            CostKind::Lmsr => {}
        }
        let lambda = self.lambda;
        // Stationarity gives w_j(nu) = exp(lambda (q_j - nu) - 1); the mass
        // sum_j w_j(nu) is decreasing in nu and equals one inside this bracket.
        let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = |nu: f64| -> Vec<f64> {
            q.iter()
                .map(|qj| (lambda * (qj - nu) - 1.0).exp())
                .collect()
        };
        let mut lo = top - 2.0 / lambda;
        let mut hi = top + (self.d as f64).ln().max(1.0) / lambda;
        for _ in 0..iterations {
            let mid = 0.5 * (lo + hi);
            let mass: f64 = weights(mid).iter().sum();
            if mass > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * top.abs().max(1.0) {
                break;
            }
        }
        let w = weights(0.5 * (lo + hi));
        // the bracket leaves a sub-ulp mass error; normalize it away
        let s: f64 = w.iter().sum();
        Ok(PriceVector(w.into_iter().map(|x| x / s).collect()))
    }
}

/// Default clamp margin for price inversion: `alpha / (4 d)`.
pub fn default_clamp_margin(alpha: f64, d: usize) -> f64 {
    alpha / (4.0 * d as f64)
}

/// Raise every coordinate below `eta` to `eta`, then renormalize to sum one.
pub fn clamp_prices(p: &[f64], eta: f64) -> Result<PriceVector> {
    let d = p.len();
    if d == 0 {
        return Err(invalid_param("empty price vector"));
    }
    if !(eta > 0.0 && eta < 1.0 / d as f64) {
        return Err(invalid_param(format!(
            "clamp margin must lie in (0, 1/d) = (0, {}), got {eta}",
            1.0 / d as f64
        )));
    }
    let pv = PriceVector(p.to_vec());
    pv.validate_distribution(1e-9)?;
    let raised: Vec<f64> = p.iter().map(|x| x.max(eta)).collect();
    let s: f64 = raised.iter().sum();
    Ok(PriceVector(raised.into_iter().map(|x| x / s).collect()))
}
