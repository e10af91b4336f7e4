use privmarket::noise_schedule::{
    events_at, low_bit, low_bit_total, noise_path, noise_path_sum, participation_count, per_level_tally,
    sells_by_power_decomposition, total_holding_gap, NoiseLedger, NoiseMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LIMIT: u64 = 1 << 14;

fn one_bits(t: u64) -> Vec<u64> {
    // positions of the set bits of t, read as the times they were set
    let mut out = Vec::new();
    let mut prefix = 0;
    for bit in (0..64).rev() {
        if t >> bit & 1 == 1 {
            prefix += 1u64 << bit;
            out.push(prefix);
        }
    }
    out
}

fn ledger(horizon: u64) -> NoiseLedger {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    rng.set_stream(0);
    NoiseLedger::for_horizon(2, horizon, 1.0, NoiseMode::Laplace, rng).unwrap()
}

#[test]
fn bundles_are_held_for_exactly_low_bit_steps() {
    let mut n = ledger(LIMIT);
    for _ in 0..LIMIT {
        n.advance().unwrap();
    }
    for b in n.bundles() {
        if let Some(gap) = b.holding_gap() {
            assert_eq!(gap, low_bit(b.time).unwrap(), "z^{}", b.time);
        } else {
            // still held: its low bit has not flipped yet
            assert!(b.time + low_bit(b.time).unwrap() > LIMIT);
        }
    }
}

#[test]
fn held_set_is_the_binary_expansion() {
    let mut n = ledger(LIMIT);
    for t in 1..=LIMIT {
        n.advance().unwrap();
        assert_eq!(n.held(), one_bits(t).as_slice(), "t = {t}");
        let mut path = noise_path(t);
        path.reverse();
        assert_eq!(n.held(), path.as_slice());
    }
}

#[test]
fn held_sum_equals_path_sum() {
    let mut n = ledger(LIMIT);
    for t in 1..=LIMIT {
        n.advance().unwrap();
        let held = n.held_sum();
        let path = noise_path_sum(t, 2, |s| n.bundle(s).map(|b| b.value.as_slice())).unwrap();
        for (a, b) in held.iter().zip(&path) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "t = {t}");
        }
    }
}

#[test]
fn every_bundle_is_sold_exactly_once() {
    for horizon in [1u64, 2, 7, 8, 100, 1024] {
        let mut n = ledger(horizon);
        let mut sold = vec![0u32; horizon as usize + 1];
        for _ in 0..horizon {
            for (s, _) in n.advance().unwrap().sells {
                sold[s as usize] += 1;
            }
        }
        for (s, _) in n.close_out().unwrap() {
            sold[s as usize] += 1;
        }
        assert!(sold[1..].iter().all(|&c| c == 1), "T = {horizon}");
        assert!(n.held().is_empty());
        assert!(n.close_out().is_err());
    }
}

#[test]
fn counter_and_power_descriptions_agree() {
    for t in 1..=LIMIT {
        let e = events_at(t).unwrap();
        assert_eq!(e.sells, sells_by_power_decomposition(t).unwrap(), "t = {t}");
        assert_eq!(e.buy, t);
    }
}

#[test]
fn participation_bounded_by_depth_plus_one() {
    for horizon in 1..=(1u64 << 12) {
        let limit = horizon.ilog2() + 1;
        // trade 1 is the worst case; check it and a spread of others
        let first = participation_count(1, horizon).unwrap();
        assert!(first <= limit);
        if horizon.is_power_of_two() {
            assert_eq!(first, limit, "T = {horizon}");
        }
        if horizon <= 512 || horizon.is_power_of_two() {
            for tp in 1..=horizon {
                assert!(participation_count(tp, horizon).unwrap() <= limit);
            }
        }
    }
}

#[test]
fn low_bit_tallies() {
    for j in 0..=14 {
        let tp = 1u64 << j;
        // bundles sold before close are those with t < T'
        assert_eq!(low_bit_total(tp - 1), per_level_tally(tp).unwrap(), "T' = {tp}");
        assert_eq!(total_holding_gap(tp), low_bit_total(tp - 1), "T' = {tp}");
    }
    assert_eq!(low_bit_total(8), 20);
    assert_eq!(per_level_tally(8), Some(12));
}
