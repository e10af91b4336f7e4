use privmarket::cost_function::{log_sum_exp, OutcomeModel, ScaledCost, SharesVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let lambda: f64 = 10f64.powf(rng.random_range(-3.0..=0.0));
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..=3.0) / lambda).collect();
        let c = ScaledCost::lmsr(d, lambda).unwrap();
        let p = c.prices(&q).unwrap();
        let h = 1e-4 / lambda;
        for j in 0..d {
            let mut up = q.clone();
            let mut dn = q.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (c.cost(&up).unwrap() - c.cost(&dn).unwrap()) / (2.0 * h);
            assert!((fd - p[j]).abs() <= 1e-6 * p[j], "d={d} lambda={lambda} j={j}: {fd} vs {}", p[j]);
        }
    }
}

#[test]
fn large_states_stay_finite() {
    let c = ScaledCost::lmsr(3, 1.0).unwrap();
    let q = [1e6, -1e6, 5e5];
    assert!(c.cost(&q).unwrap().is_finite());
    let p = c.prices(&q).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

// every trade sequence of length <= 6 over {0, +-e1, +-e2}
#[test]
fn exhaustive_worst_case_loss_is_bounded() {
    let moves = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    let outcomes = OutcomeModel::complete(2);
    for &lambda in &[1.0, 0.5, 0.1, 0.01] {
        let c = ScaledCost::lmsr(2, lambda).unwrap();
        let bound = c.worst_case_loss() + 1e-9;
        let c0 = c.cost(&[0.0, 0.0]).unwrap();
        let mut worst = f64::NEG_INFINITY;
        for len in 0..=6u32 {
            for code in 0..5usize.pow(len) {
                let mut q = [0.0, 0.0];
                let mut x = code;
                for _ in 0..len {
                    let m = moves[x % 5];
                    x /= 5;
                    q[0] += m[0];
                    q[1] += m[1];
                }
                let collected = c.cost(&q).unwrap() - c0;
                for o in 0..2 {
                    let paid: f64 = outcomes.payoff(o).unwrap().iter().zip(&q).map(|(a, b)| a * b).sum();
                    worst = worst.max(paid - collected);
                }
            }
        }
        assert!(worst <= bound, "lambda={lambda}: loss {worst} > {bound}");
    }
}

#[test]
fn ftrl_agrees_with_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let d = rng.random_range(1..=10);
        let lambda: f64 = rng.random_range(0.001..=1.0);
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..=20.0)).collect();
        let c = ScaledCost::lmsr(d, lambda).unwrap();
        let a = c.prices(&q).unwrap();
        let b = c.ftrl_price(&q, 200).unwrap();
        assert!(a.l1_distance(&b) <= 1e-6, "{a:?} vs {b:?}");
    }
}

fn state(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, d)
}

proptest! {
    #[test]
    fn perspective_scaling(q in state(4), lambda in 0.001f64..=1.0) {
        let scaled = ScaledCost::lmsr(4, lambda).unwrap();
        let lq: Vec<f64> = q.iter().map(|x| lambda * x).collect();
        let expect = log_sum_exp(&lq) / lambda;
        let got = scaled.cost(&q).unwrap();
        prop_assert!((got - expect).abs() <= 4.0 * f64::EPSILON * expect.abs().max(1.0));
    }

    #[test]
    fn telescoping(trades in prop::collection::vec(state(3), 1..20), lambda in 0.01f64..=1.0) {
        let c = ScaledCost::lmsr(3, lambda).unwrap();
        let mut q = SharesVector::zeros(3);
        let mut paid = 0.0;
        for dq in &trades {
            paid += c.trade_cost(&q, dq).unwrap();
            q.add_assign(dq);
        }
        let direct = c.cost(&q).unwrap() - c.cost(&[0.0; 3]).unwrap();
        let scale = trades.iter().map(|t| t.iter().map(|x| x.abs()).sum::<f64>()).sum::<f64>().max(1.0);
        prop_assert!((paid - direct).abs() <= 1e-12 * scale, "{} vs {}", paid, direct);
    }

    #[test]
    fn inversion_round_trip(raw in prop::collection::vec(0.05f64..1.0, 2..6), lambda in 0.01f64..=1.0) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let c = ScaledCost::lmsr(p.len(), lambda).unwrap();
        let eta = 0.01 / p.len() as f64;
        let q = c.invert_prices(&p, eta).unwrap();
        prop_assert_eq!(*q.last().unwrap(), 0.0);
        let back = c.prices(&q).unwrap();
        prop_assert!(back.l1_distance(&p) < 1e-9);
    }
}
