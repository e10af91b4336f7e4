use privmarket::cost_function::{PriceVector, ScaledCost, SharesVector};
use privmarket::traders::{best_response, expected_profit, Decision, StrategyContext, StrategyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_simplex(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

#[test]
fn large_gaps_are_profitable() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 1000 {
        let d = rng.random_range(2..=5);
        let alpha: f64 = rng.random_range(0.01..0.2);
        let lambda = rng.random_range(0.0..1.0) * alpha;
        if lambda <= 0.0 {
            continue;
        }
        let cost = ScaledCost::lmsr(d, lambda).unwrap();
        let q_hat: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0) / lambda).collect();
        let p_hat = cost.prices(&q_hat).unwrap();
        let belief = PriceVector::new(random_simplex(d, &mut rng));
        let gap = belief.linf_distance(&p_hat);
        if gap < 2.0 * alpha {
            continue;
        }
        checked += 1;
        let br = best_response(&cost, &q_hat, &belief, alpha).unwrap();
        assert!(br.expected_profit >= gap - lambda - 1e-12, "profit {} gap {gap} lambda {lambda}", br.expected_profit);
        assert!(br.expected_profit > alpha);
        let dq = br.decision.bundle().expect("should trade");
        assert!(dq.l1_norm() <= 1.0 + 1e-12);
        let recomputed = expected_profit(&cost, &q_hat, &belief, dq).unwrap();
        assert!((recomputed - br.expected_profit).abs() < 1e-12);
    }
}

#[test]
fn fee_deters_small_gaps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let d = rng.random_range(2..=5);
        let alpha: f64 = rng.random_range(0.01..0.2);
        let lambda = rng.random_range(0.001..1.0) * alpha;
        let cost = ScaledCost::lmsr(d, lambda).unwrap();
        let q_hat: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) / lambda).collect();
        let p_hat = cost.prices(&q_hat).unwrap();
        // belief inside the l-infinity ball of radius alpha around the prices
        let mut b: Vec<f64> = p_hat.iter().map(|p| (p + rng.random_range(-alpha..alpha)).max(0.0)).collect();
        let s: f64 = b.iter().sum();
        b.iter_mut().for_each(|x| *x /= s);
        let belief = PriceVector::new(b);
        if belief.linf_distance(&p_hat) > alpha {
            continue;
        }
        let br = best_response(&cost, &q_hat, &belief, alpha).unwrap();
        assert_eq!(br.decision, Decision::Abstain, "gap {}", belief.linf_distance(&p_hat));
    }
}

// The context exposes exactly these fields; a new field fails to compile here.
#[test]
fn context_carries_only_public_information() {
    let cost = ScaledCost::lmsr(2, 0.1).unwrap();
    let states = vec![SharesVector::zeros(2)];
    let prices = vec![PriceVector::uniform(2)];
    let ctx = StrategyContext { t: 1, own_trades: &[], published_states: &states, published_prices: &prices, fee: 0.1, cost: &cost };
    let StrategyContext { t, own_trades, published_states, published_prices, fee, cost: _ } = ctx;
    assert_eq!((t, own_trades.len(), published_states.len(), published_prices.len(), fee), (1, 0, 1, 1, 0.1));
}

#[test]
fn strategies_round_trip_through_json() {
    let strategies = vec![
        StrategyConfig::Belief { belief: vec![0.5, 0.5] },
        StrategyConfig::ArbitrageHunter { belief: vec![0.3, 0.7], threshold: Some(0.05) },
        StrategyConfig::Herd { coordinate: 1 },
        StrategyConfig::Random,
        StrategyConfig::Abstainer,
    ];
    for s in strategies {
        let text = serde_json::to_string(&s).unwrap();
        let back: StrategyConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(StrategyConfig::from_kind(s.kind_name(), 2).unwrap().kind_name(), s.kind_name());
    }
    assert!(serde_json::from_str::<StrategyConfig>(r#"{"kind":"herd","coordinate":0,"extra":1}"#).is_err());
}
