use privmarket::cost_function::{CostKind, OutcomeModel, SharesVector};
use privmarket::fee_market::{lambda_star, loss_bounds, MarketParams, MarketSession};
use privmarket::noise_schedule::{low_bit, NoiseMode};
use privmarket::traders::{make_strategy, step_strategy, Decision, StrategyContext, StrategyConfig};
use privmarket::MarketError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_trade(d: usize, rng: &mut ChaCha8Rng) -> SharesVector {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let n: f64 = v.iter().map(|x| x.abs()).sum::<f64>().max(1e-9);
    let r: f64 = rng.random_range(0.0..=1.0);
    SharesVector::new(v.into_iter().map(|x| x * r / n).collect())
}

#[test]
fn ledger_and_telescoping_identities_hold_per_seed() {
    let outcomes = OutcomeModel::complete(3);
    for seed in 0..50 {
        let params = MarketParams::new(3, 1.0, 0.2, 0.1, 40).unwrap();
        let mut s = MarketSession::open(params, CostKind::Lmsr, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for _ in 0..40 {
            s.step(&random_trade(3, &mut rng)).unwrap();
        }
        let cost = *s.cost();
        let ledger = s.close(&outcomes, (seed % 3) as usize).unwrap();
        let scale = ledger.participant_payments.abs() + ledger.ntl.abs() + ledger.fees + 1.0;
        assert!(ledger.identity_residual().abs() <= 1e-9 * scale, "seed {seed}: {}", ledger.identity_residual());
        let direct = cost.cost(s.true_state()).unwrap() - cost.cost(&[0.0; 3]).unwrap();
        let flows = ledger.participant_payments + ledger.ntl;
        assert!((flows - direct).abs() <= 1e-9 * (direct.abs() + 1.0), "seed {seed}: {flows} vs {direct}");
        for i in 0..3 {
            assert!((s.published_state()[i] - s.true_state()[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn noise_off_publishes_true_prices() {
    let params = MarketParams::new(2, 1.0, 0.3, 0.1, 64).unwrap().with_noise(NoiseMode::Off);
    let mut s = MarketSession::open(params, CostKind::Lmsr, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..64 {
        let r = s.step(&random_trade(2, &mut rng)).unwrap();
        assert_eq!(r.price_gap_l1, 0.0);
        assert_eq!(r.share_gap_l1, 0.0);
    }
    let ledger = s.close_with_payoff(&[1.0, 0.0]).unwrap();
    assert_eq!(ledger.ntl, 0.0);
}

#[test]
fn rejects_oversized_and_late_trades() {
    let params = MarketParams::new(2, 1.0, 0.3, 0.1, 2).unwrap();
    let mut s = MarketSession::open(params, CostKind::Lmsr, 0).unwrap();
    let big = SharesVector::new(vec![0.7, -0.7]);
    assert!(matches!(s.step(&big), Err(MarketError::TradeRejected { .. })));
    assert_eq!(s.t(), 0);
    s.step(&SharesVector::unit(2, 0)).unwrap();
    s.step(&SharesVector::unit(2, 1)).unwrap();
    assert!(matches!(s.step(&SharesVector::unit(2, 0)), Err(MarketError::MarketClosed { .. })));
}

#[test]
fn same_seed_same_noise() {
    let run = |seed| {
        let params = MarketParams::new(2, 1.0, 0.3, 0.1, 32).unwrap();
        let mut s = MarketSession::open(params, CostKind::Lmsr, seed).unwrap();
        for t in 0..32 {
            s.step(&SharesVector::unit(2, t % 2)).unwrap();
        }
        s.published_states().to_vec()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

// Each bundle's realized loss is on the order of lambda * K * (arrivals it was exposed to),
// even when a trader hunts the noise.
#[test]
fn bundle_losses_under_arbitrage() {
    let (d, horizon, alpha) = (2, 16u64, 0.3);
    let lambda = lambda_star(horizon, alpha, 0.1, 1.0, d).unwrap();
    let seeds = 600;
    let mut losses = vec![Vec::new(); horizon as usize + 1];
    let mut gaps = vec![0u64; horizon as usize + 1];
    let mut norm_sum = 0.0;
    let mut norm_n = 0.0;
    for seed in 0..seeds {
        let params = MarketParams::new(d, 1.0, alpha, 0.1, horizon).unwrap().with_fee(0.0);
        let mut s = MarketSession::open(params, CostKind::Lmsr, seed).unwrap();
        let strategy = StrategyConfig::ArbitrageHunter { belief: vec![0.5, 0.5], threshold: Some(0.0) };
        let mut hunter = make_strategy(&strategy, d, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut own = Vec::new();
        while !s.is_full() {
            let cost = *s.cost();
            let ctx = StrategyContext {
                t: s.t() + 1,
                own_trades: &own,
                published_states: s.published_states(),
                published_prices: s.published_prices(),
                fee: 0.0,
                cost: &cost,
            };
            let dq = match step_strategy(hunter.as_mut(), &ctx).unwrap() {
                Decision::Trade(dq) => dq,
                Decision::Abstain => SharesVector::zeros(d),
            };
            s.step(&dq).unwrap();
            own.push(dq);
        }
        s.close_with_payoff(&[0.5, 0.5]).unwrap();
        for b in s.noise().bundles() {
            losses[b.time as usize].push(b.realized_loss().unwrap());
            gaps[b.time as usize] = b.holding_gap().unwrap();
            norm_sum += b.value.iter().map(|x| x * x).sum::<f64>().sqrt();
            norm_n += 1.0;
        }
    }
    let k = norm_sum / norm_n;
    for t in 1..=horizon as usize {
        let xs = &losses[t];
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let bound = lambda * gaps[t] as f64 * k;
        assert!(mean <= bound + 3.0 * se, "z^{t}: mean loss {mean} > {bound} + 3 * {se}");
        if t < horizon as usize {
            assert_eq!(gaps[t], low_bit(t as u64).unwrap());
        }
    }
}

#[test]
fn loss_bound_reference_values() {
    let b = loss_bounds(6.177e-4, 16, 16.0, 0.1, 2f64.ln());
    assert!((b.ntl_bound - 0.3163).abs() < 1e-4, "{}", b.ntl_bound);
}
