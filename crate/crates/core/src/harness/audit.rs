//! Structural privacy audit: partial-sum sensitivity over neighboring trade
//! sequences, exact participation counts, and the configured noise scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid_param, Result};
use crate::noise_schedule::{noise_scale, participation_count, s_flip};

/// Largest horizon the audit enumerates.
pub const MAX_AUDIT_HORIZON: u64 = 1 << 14;
pub const DEFAULT_PAIRS: usize = 10_000;
const SENSITIVITY_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyAudit {
    pub horizon: u64,
    pub d: usize,
    pub epsilon: f64,
    pub pairs: usize,
    /// Largest l1 change of any partial sum over all sampled neighbors.
    pub max_sensitivity: f64,
    pub sensitivity_ok: bool,
    /// `participation[t' - 1]` = number of partial sums containing trade `t'`.
    pub participation: Vec<u32>,
    pub max_participation: u32,
    /// `floor(log2 T) + 1`.
    pub participation_limit: u32,
    pub participation_ok: bool,
    /// `ceil(log2 T)`, the composition count the noise is calibrated for.
    pub depth: u32,
    /// `max_participation / depth`: the worst-case privacy loss as a multiple of epsilon.
    pub epsilon_multiplier: f64,
    pub noise_scale: f64,
    pub expected_noise_scale: f64,
    pub noise_scale_ok: bool,
    pub passed: bool,
}

fn random_trade(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    let target: f64 = rng.random_range(0.0..=1.0);
    if norm > 0.0 {
        for x in &mut v {
            *x *= target / norm;
        }
    }
    v
}

fn prefix_sums(trades: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(trades.len() + 1);
    let mut acc = vec![0.0; d];
    out.push(acc.clone());
    for t in trades {
        for (a, x) in acc.iter_mut().zip(t) {
            *a += x;
        }
        out.push(acc.clone());
    }
    out
}

/// Largest l1 change of the partial sums `sum_{s(t) < s <= t} dq^s` between two sequences.
pub fn max_partial_sum_change(a: &[Vec<f64>], b: &[Vec<f64>], d: usize) -> f64 {
    let pa = prefix_sums(a, d);
    let pb = prefix_sums(b, d);
    let mut worst: f64 = 0.0;
    for t in 1..=a.len() {
        let lo = s_flip(t as u64) as usize;
        let change: f64 = (0..d)
            .map(|j| ((pa[t][j] - pa[lo][j]) - (pb[t][j] - pb[lo][j])).abs())
            .sum();
        worst = worst.max(change);
    }
    worst
}

pub fn privacy_audit(horizon: u64, d: usize, epsilon: f64) -> Result<PrivacyAudit> {
    privacy_audit_with(horizon, d, epsilon, DEFAULT_PAIRS, 0)
}

pub fn privacy_audit_with(horizon: u64, d: usize, epsilon: f64, pairs: usize, seed: u64) -> Result<PrivacyAudit> {
    if horizon < 2 || horizon > MAX_AUDIT_HORIZON {
        return Err(invalid_param(format!("audit needs 2 <= T <= {MAX_AUDIT_HORIZON}, got {horizon}")));
    }
    if d == 0 {
        return Err(invalid_param("security count d must be at least 1"));
    }
    let scale = noise_scale(horizon, epsilon)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = horizon as usize;
    let mut max_sensitivity: f64 = 0.0;
    for _ in 0..pairs {
        let a: Vec<Vec<f64>> = (0..n).map(|_| random_trade(d, &mut rng)).collect();
        let mut b = a.clone();
        let i = rng.random_range(0..n);
        b[i] = random_trade(d, &mut rng);
        max_sensitivity = max_sensitivity.max(max_partial_sum_change(&a, &b, d));
    }

    let participation = (1..=horizon)
        .map(|t| participation_count(t, horizon))
        .collect::<Result<Vec<_>>>()?;
    let max_participation = participation.iter().copied().max().unwrap_or(0);
    let participation_limit = horizon.ilog2() + 1;
    let depth = (horizon as f64).log2().ceil() as u32;
    let expected_noise_scale = 2.0 * f64::from(depth) / epsilon;

    let sensitivity_ok = max_sensitivity <= SENSITIVITY_LIMIT + 1e-12;
    let participation_ok = max_participation <= participation_limit;
    let noise_scale_ok = (scale - expected_noise_scale).abs() <= 1e-12 * expected_noise_scale;
    Ok(PrivacyAudit {
        horizon,
        d,
        epsilon,
        pairs,
        max_sensitivity,
        sensitivity_ok,
        participation,
        max_participation,
        participation_limit,
        participation_ok,
        depth,
        epsilon_multiplier: f64::from(max_participation) / f64::from(depth),
        noise_scale: scale,
        expected_noise_scale,
        noise_scale_ok,
        passed: sensitivity_ok && participation_ok && noise_scale_ok,
    })
}
