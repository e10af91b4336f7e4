//! Continual-observation noise: the binary-counter schedule on which the
//! noise trader buys and sells Laplace bundles, plus the combinatorial
//! facts the privacy argument relies on.
//!
//! After step `t` the noise trader holds exactly one bundle per one-bit of
//! `t`: the bundles bought at `t`, `s(t)`, `s(s(t))`, ... where `s` clears the
//! lowest set bit. Incrementing the counter sells the bundles of the trailing
//! ones (most recent first) and buys the bundle of the new one-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, invalid_state, Result};

/// Largest power of two dividing `t`.
pub fn low_bit(t: u64) -> Result<u64> {
    if t == 0 {
        return Err(invalid_param("low_bit is defined for t >= 1"));
    }
    Ok(t & t.wrapping_neg())
}

/// Clear the lowest set bit; `s_flip(0) == 0`.
pub fn s_flip(t: u64) -> u64 {
    t & t.wrapping_sub(1)
}

/// `ceil(log2 t)` for `t >= 1`.
pub fn ceil_log2(t: u64) -> u32 {
    if t <= 1 {
        0
    } else {
        64 - (t - 1).leading_zeros()
    }
}

/// Tree depth used for noise scaling: `max(ceil(log2 T), 1)`.
pub fn tree_depth(horizon: u64) -> u32 {
    ceil_log2(horizon).max(1)
}

/// Per-coordinate Laplace scale `2 * depth / epsilon` for a horizon `T`.
pub fn noise_scale(horizon: u64, epsilon: f64) -> Result<f64> {
    if horizon == 0 {
        return Err(invalid_param("horizon must be at least 1"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(2.0 * tree_depth(horizon) as f64 / epsilon)
}

/// The walk `t, s(t), s(s(t)), ...` down to (and excluding) zero.
pub fn noise_path(t: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(t.count_ones() as usize);
    let mut x = t;
    while x > 0 {
        out.push(x);
        x = s_flip(x);
    }
    out
}

/// Noise-trader activity at step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub buy: u64,
    /// Bundle times sold before the purchase, most recent first.
    pub sells: Vec<u64>,
}

pub fn events_at(t: u64) -> Result<ScheduleEvent> {
    if t == 0 {
        return Err(invalid_param("schedule steps start at t = 1"));
    }
    let keep = noise_path(t);
    let sells = noise_path(t - 1)
        .into_iter()
        .filter(|s| !keep.contains(s))
        .collect();
    Ok(ScheduleEvent { buy: t, sells })
}

/// The same sell set read off `t = 2^j m` with `m` odd: times
/// `t-1, t-2, t-4, ..., t-2^(j-1)`.
pub fn sells_by_power_decomposition(t: u64) -> Result<Vec<u64>> {
    let j = low_bit(t)?.trailing_zeros();
    Ok((0..j).map(|i| t - (1u64 << i)).collect())
}

/// Number of noisy partial sums that contain trade `t_prime`, i.e. the count
/// of `t` in `[t_prime, horizon]` with `s(t) < t_prime <= t`.
pub fn participation_count(t_prime: u64, horizon: u64) -> Result<u32> {
    if t_prime == 0 || t_prime > horizon {
        return Err(invalid_param(format!(
            "need 1 <= t' <= T, got t' = {t_prime}, T = {horizon}"
        )));
    }
    Ok((t_prime..=horizon).filter(|&t| s_flip(t) < t_prime).count() as u32)
}

/// Sum of the bundles on the path of `t`.
pub fn noise_path_sum<'a, F>(t: u64, d: usize, lookup: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Option<&'a [f64]>,
{
    let mut acc = vec![0.0; d];
    for s in noise_path(t) {
        let z = lookup(s).ok_or_else(|| invalid_state(format!("missing noise bundle z^{s}")))?;
        if z.len() != d {
            return Err(invalid_state(format!(
                "noise bundle z^{s} has {} coordinates, expected {d}",
                z.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(z) {
            *a += v;
        }
    }
    Ok(acc)
}

/// One Laplace(0, scale) draw by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        let v = u - 0.5;
        return -scale * v.signum() * (1.0 - 2.0 * v.abs()).ln();
    }
}

/// `d` independent Laplace(0, scale) coordinates.
pub fn sample_bundle<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(invalid_param(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok((0..d).map(|_| sample_laplace(scale, rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Laplace,
    /// Every bundle is the zero vector.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseBundle {
    pub time: u64,
    pub value: Vec<f64>,
    /// Step at which the bundle was sold; the last arrival for close-out sales.
    pub sold_at: Option<u64>,
    pub sold_at_close: bool,
    pub buy_cost: f64,
    pub sell_cost: Option<f64>,
    /// Published state just before the purchase.
    pub state_at_buy: Option<Vec<f64>>,
    /// Published state just after the sale.
    pub state_after_sell: Option<Vec<f64>>,
}

impl NoiseBundle {
    /// Net money the noise trader lost on this bundle (buy charge plus sell charge).
    pub fn realized_loss(&self) -> Option<f64> {
        self.sell_cost.map(|s| self.buy_cost + s)
    }

    /// Participant arrivals between purchase and sale.
    pub fn holding_gap(&self) -> Option<u64> {
        self.sold_at.map(|s| s - self.time)
    }
}

/// Sells and purchase performed by the noise trader at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStep {
    pub t: u64,
    pub sells: Vec<(u64, Vec<f64>)>,
    pub buy: Vec<f64>,
}

/// The noise trader's private bookkeeping.
#[derive(Debug, Clone)]
pub struct NoiseLedger {
    d: usize,
    scale: f64,
    mode: NoiseMode,
    rng: ChaCha8Rng,
    bundles: Vec<NoiseBundle>,
    /// Unsold bundle times in purchase order.
    held: Vec<u64>,
    t: u64,
    closed: bool,
}

impl NoiseLedger {
    pub fn new(d: usize, scale: f64, mode: NoiseMode, rng: ChaCha8Rng) -> Result<Self> {
        if d == 0 {
            return Err(invalid_param("security count d must be at least 1"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(invalid_param(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(Self {
            d,
            scale,
            mode,
            rng,
            bundles: Vec::new(),
            held: Vec::new(),
            t: 0,
            closed: false,
        })
    }

    pub fn for_horizon(
        d: usize,
        horizon: u64,
        epsilon: f64,
        mode: NoiseMode,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        Self::new(d, noise_scale(horizon, epsilon)?, mode, rng)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Unsold bundle times in purchase order.
    pub fn held(&self) -> &[u64] {
        &self.held
    }

    pub fn bundles(&self) -> &[NoiseBundle] {
        &self.bundles
    }

    pub fn bundle(&self, time: u64) -> Option<&NoiseBundle> {
        time.checked_sub(1)
            .and_then(|i| self.bundles.get(i as usize))
    }

    fn bundle_mut(&mut self, time: u64) -> Result<&mut NoiseBundle> {
        time.checked_sub(1)
            .and_then(|i| self.bundles.get_mut(i as usize))
            .ok_or_else(|| invalid_state(format!("no noise bundle z^{time}")))
    }

    fn draw(&mut self) -> Result<Vec<f64>> {
        match self.mode {
            NoiseMode::Laplace => sample_bundle(self.d, self.scale, &mut self.rng),
            NoiseMode::Off => Ok(vec![0.0; self.d]),
        }
    }

    /// Advance to the next step: sell per the schedule, then buy `z^t`.
    pub fn advance(&mut self) -> Result<NoiseStep> {
        if self.closed {
            return Err(invalid_state("noise ledger already closed out"));
        }
        let t = self.t + 1;
        let event = events_at(t)?;
        let mut sells = Vec::with_capacity(event.sells.len());
        for &s in &event.sells {
            match self.held.pop() {
                Some(top) if top == s => {}
                other => {
                    return Err(invalid_state(format!(
                        "schedule wants to sell z^{s} at t = {t} but the most recent held bundle is {other:?}"
                    )))
                }
            }
            let b = self.bundle_mut(s)?;
            b.sold_at = Some(t);
            sells.push((s, b.value.clone()));
        }
        let z = self.draw()?;
        self.bundles.push(NoiseBundle {
            time: t,
            value: z.clone(),
            sold_at: None,
            sold_at_close: false,
            buy_cost: 0.0,
            sell_cost: None,
            state_at_buy: None,
            state_after_sell: None,
        });
        self.held.push(t);
        self.t = t;
        self.check_binary_invariant()?;
        Ok(NoiseStep { t, sells, buy: z })
    }

    /// Sell every remaining bundle in reverse order of purchase.
    pub fn close_out(&mut self) -> Result<Vec<(u64, Vec<f64>)>> {
        if self.closed {
            return Err(invalid_state("noise ledger already closed out"));
        }
        let last = self.t;
        let mut out = Vec::with_capacity(self.held.len());
        while let Some(s) = self.held.pop() {
            let b = self.bundle_mut(s)?;
            b.sold_at = Some(last);
            b.sold_at_close = true;
            out.push((s, b.value.clone()));
        }
        self.closed = true;
        Ok(out)
    }

    pub fn record_purchase(&mut self, time: u64, cost: f64, state_before: &[f64]) -> Result<()> {
        let b = self.bundle_mut(time)?;
        b.buy_cost = cost;
        b.state_at_buy = Some(state_before.to_vec());
        Ok(())
    }

    pub fn record_sale(&mut self, time: u64, cost: f64, state_after: &[f64]) -> Result<()> {
        let b = self.bundle_mut(time)?;
        b.sell_cost = Some(cost);
        b.state_after_sell = Some(state_after.to_vec());
        Ok(())
    }

    /// Sum of currently held bundles.
    pub fn held_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for &s in &self.held {
            if let Some(b) = self.bundle(s) {
                for (a, v) in acc.iter_mut().zip(&b.value) {
                    *a += v;
                }
            }
        }
        acc
    }

    /// Noise on the published state at step `t` in path form.
    pub fn path_sum(&self, t: u64) -> Result<Vec<f64>> {
        noise_path_sum(t, self.d, |s| self.bundle(s).map(|b| b.value.as_slice()))
    }

    /// Held bundle times must be exactly the path of the current step.
    pub fn check_binary_invariant(&self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        let mut expected = noise_path(self.t);
        expected.reverse();
        if expected != self.held {
            return Err(invalid_state(format!(
                "held bundles {:?} differ from the one-bits of t = {} ({:?})",
                self.held, self.t, expected
            )));
        }
        Ok(())
    }

    /// Mean l2 norm of the bundles drawn so far (empirical K).
    pub fn mean_bundle_l2(&self) -> Option<f64> {
        if self.bundles.is_empty() {
            return None;
        }
        let total: f64 = self
            .bundles
            .iter()
            .map(|b| b.value.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        Some(total / self.bundles.len() as f64)
    }
}

/// Exact `sum_{t=1}^{upto} low_bit(t)`.
pub fn low_bit_total(upto: u64) -> u64 {
    (1..=upto).map(|t| t & t.wrapping_neg()).sum()
}

/// The per-level tally `sum_{j=0}^{log2 T' - 1} 2^j * T' / 2^(j+1)` for a
/// power-of-two `T'`; `None` otherwise.
pub fn per_level_tally(arrivals: u64) -> Option<u64> {
    if arrivals == 0 || !arrivals.is_power_of_two() {
        return None;
    }
    let levels = arrivals.trailing_zeros();
    Some(
        (0..levels)
            .map(|j| (1u64 << j) * (arrivals >> (j + 1)))
            .sum(),
    )
}

/// Participant arrivals each bundle is exposed to in a run of `arrivals`
/// steps followed by close-out, summed over bundles.
pub fn total_holding_gap(arrivals: u64) -> u64 {
    let keep = noise_path(arrivals);
    (1..=arrivals)
        .map(|t| {
            if keep.contains(&t) {
                arrivals - t
            } else {
                t & t.wrapping_neg()
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn low_bit_examples() {
        assert_eq!(low_bit(7).unwrap(), 1);
        assert_eq!(low_bit(12).unwrap(), 4);
        assert_eq!(low_bit(8).unwrap(), 8);
        assert!(low_bit(0).is_err());
    }

    #[test]
    fn s_flip_examples() {
        assert_eq!(s_flip(6), 4);
        assert_eq!(s_flip(1), 0);
        assert_eq!(s_flip(12), 8);
        assert_eq!(s_flip(0), 0);
    }

    #[test]
    fn events_examples() {
        assert_eq!(
            events_at(8).unwrap(),
            ScheduleEvent { buy: 8, sells: vec![7, 6, 4] }
        );
        assert_eq!(events_at(1).unwrap(), ScheduleEvent { buy: 1, sells: vec![] });
        assert_eq!(events_at(6).unwrap(), ScheduleEvent { buy: 6, sells: vec![5] });
        assert!(events_at(0).is_err());
    }

    #[test]
    fn power_decomposition_matches_counter() {
        for t in 1..=4096 {
            assert_eq!(
                events_at(t).unwrap().sells,
                sells_by_power_decomposition(t).unwrap(),
                "t = {t}"
            );
        }
    }

    #[test]
    fn participation_examples() {
        assert_eq!(participation_count(2, 8).unwrap(), 3);
        assert_eq!(participation_count(1, 8).unwrap(), 4);
        assert_eq!(participation_count(5, 8).unwrap(), 3);
        assert!(participation_count(0, 8).is_err());
        assert!(participation_count(9, 8).is_err());
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
        assert_eq!(tree_depth(1), 1);
        assert_eq!(noise_scale(16, 1.0).unwrap(), 8.0);
        assert_eq!(noise_scale(1, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn path_sum_examples() {
        let mut bundles = std::collections::BTreeMap::new();
        for t in 1..=8u64 {
            bundles.insert(t, vec![t as f64, 10.0 * t as f64]);
        }
        let get = |s: u64| bundles.get(&s).map(Vec::as_slice);
        assert_eq!(noise_path_sum(5, 2, get).unwrap(), vec![9.0, 90.0]);
        assert_eq!(noise_path_sum(8, 2, get).unwrap(), vec![8.0, 80.0]);
        assert_eq!(noise_path_sum(7, 2, get).unwrap(), vec![17.0, 170.0]);
        assert!(noise_path_sum(9, 2, get).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_validated() {
        let a = sample_bundle(3, 2.0, &mut rng(11)).unwrap();
        let b = sample_bundle(3, 2.0, &mut rng(11)).unwrap();
        assert_eq!(a, b);
        assert!(sample_bundle(3, 0.0, &mut rng(1)).is_err());
        assert!(sample_bundle(3, -1.0, &mut rng(1)).is_err());
    }

    #[test]
    fn laplace_moments() {
        // E|Lap(b)| = b, Var = 2 b^2, Var|Lap(b)| = b^2, Var(X^2) = 20 b^4
        let b = 8.0;
        let n = 100_000;
        let mut r = rng(2024);
        let xs: Vec<f64> = (0..n).map(|_| sample_laplace(b, &mut r)).collect();
        let nf = n as f64;
        let mean_abs = xs.iter().map(|x| x.abs()).sum::<f64>() / nf;
        assert!((mean_abs - b).abs() <= 3.0 * b / nf.sqrt(), "{mean_abs}");
        let mean = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let se_var = (20.0 * b.powi(4) - (2.0 * b * b).powi(2)).sqrt() / nf.sqrt();
        assert!((var - 2.0 * b * b).abs() <= 3.0 * se_var, "{var} vs 128 (se {se_var})");
    }

    #[test]
    fn ledger_tracks_binary_counter() {
        let mut ledger = NoiseLedger::new(2, 1.0, NoiseMode::Laplace, rng(3)).unwrap();
        for t in 1..=64u64 {
            let step = ledger.advance().unwrap();
            assert_eq!(step.t, t);
            let sold: Vec<u64> = step.sells.iter().map(|(s, _)| *s).collect();
            assert_eq!(sold, events_at(t).unwrap().sells);
            let held_sum = ledger.held_sum();
            let path = ledger.path_sum(t).unwrap();
            for (a, b) in held_sum.iter().zip(&path) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let rest = ledger.close_out().unwrap();
        assert_eq!(rest.iter().map(|(s, _)| *s).collect::<Vec<_>>(), vec![64]);
        assert!(ledger.held().is_empty());
        assert!(ledger.close_out().is_err());
        assert!(ledger.advance().is_err());
        assert!(ledger.bundles().iter().all(|b| b.sold_at.is_some()));
    }

    #[test]
    fn noise_off_draws_zeros() {
        let mut ledger = NoiseLedger::new(3, 5.0, NoiseMode::Off, rng(3)).unwrap();
        for _ in 0..10 {
            assert_eq!(ledger.advance().unwrap().buy, vec![0.0; 3]);
        }
    }

    #[test]
    fn tallies() {
        // bundle T' is only sold at close, so the per-level tally covers t < T'
        for k in 0..12 {
            let n = 1u64 << k;
            assert_eq!(per_level_tally(n).unwrap(), low_bit_total(n - 1));
            assert_eq!(per_level_tally(n).unwrap(), total_holding_gap(n));
            assert_eq!(per_level_tally(n).unwrap(), n * k as u64 / 2);
        }
        assert_eq!(per_level_tally(12), None);
        assert_eq!(low_bit_total(8), 20);
    }
}
