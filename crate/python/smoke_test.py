"""Smoke test for the privmarket_py extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/*.whl
"""
import json
import math

import privmarket_py as pm


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def test_cost():
    c = pm.ScaledCost(2, 0.5)
    assert c.prices([0.0, 0.0]) == [0.5, 0.5]
    assert close(c.worst_case_loss(), math.log(2) / 0.5)
    assert close(c.trade_cost([0.0, 0.0], [1.0, 0.0]), c.cost([1.0, 0.0]) - c.cost([0.0, 0.0]))
    q = c.invert_prices([0.7, 0.3], 0.01)
    assert all(close(x, y, 1e-6) for x, y in zip(c.prices(q), [0.7, 0.3]))


def test_schedule_helpers():
    assert pm.noise_scale(8, 1.0) == 6.0
    assert pm.participation_count(8, 8) == 1
    assert pm.lambda_star(64, 0.3, 0.1, 1.0, 2) > 0
    try:
        pm.ScaledCost(2, 100.0)
    except ValueError:
        pass
    else:
        raise AssertionError("lambda above 1 accepted")


def test_session():
    m = pm.MarketSession(2, 1.0, 0.3, 0.1, 8, seed=3)
    for i in range(8):
        rec = m.step([1.0, 0.0] if i % 2 == 0 else [0.0, 1.0])
        assert rec["t"] == i + 1 and close(sum(rec["published_prices"]), 1.0)
    assert m.is_full()
    ledger = m.close([1.0, 0.0])
    assert close(ledger["designer_loss"], ledger["participant_payoffs"] - ledger["participant_payments"] - ledger["fees"])

    quiet = pm.MarketSession(2, 1.0, 0.3, 0.1, 8, noise_off=True)
    rec = quiet.step([1.0, 0.0])
    assert rec["price_gap_l1"] == 0.0 and rec["share_gap_l1"] == 0.0


def test_best_response_and_audit():
    trade, profit = pm.best_response(0.01, [0.0, 0.0], [0.9, 0.1], 0.0)
    assert trade == [1.0, 0.0] and profit > 0
    trade, profit = pm.best_response(0.01, [0.0, 0.0], [0.5, 0.5], 0.3)
    assert trade is None
    audit = pm.privacy_audit(8, 2, 1.0, pairs=200)
    assert audit["passed"] and audit["participation"] == [4, 3, 3, 2, 3, 2, 2, 1]


def test_stages_and_trials():
    s = pm.stage_schedule(math.log(2), 1, 0.1, 0.1, 1.0, 5)
    assert s["schedule"]["stages"][0]["horizon"] == 19456605
    assert s["inequalities"]["all_passed"]
    cfg = {
        "market": {"d": 2, "epsilon": 1.0, "alpha": 0.3, "gamma": 0.1, "horizon": 32},
        "traders": [{"strategy": {"kind": "random"}, "count": 2}],
        "outcome": {"rule": "fixed", "outcome": 0},
        "seeds": {"start": 0, "end": 10},
    }
    rows = pm.run_trials(json.dumps(cfg))
    assert [r["seed"] for r in rows] == list(range(10))
    assert rows == pm.run_trials(json.dumps(cfg), 0, 10)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print("ok", name)
