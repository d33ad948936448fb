import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retail_rl import market
from retail_rl.env import Observation, StoreConfig, StoreEnv
from retail_rl.items import CopulaModel, ItemSet, PseudoItem, generate_items
from retail_rl.policies import (
    ConstantPolicy, RandomPolicy, SQParams, SQPolicy, calibrate_sq, expected_daily_demand, sq_act,
)


def _obs(on_hand, pipeline=0):
    stock = np.zeros((1, 30), dtype=np.int64)
    stock[0, :on_hand] = 5
    return Observation(stock, np.array([5]), np.zeros((1, 7)), np.array([1.0]), np.array([2.0]),
                       np.array([pipeline]))


def _item(base_demand):
    return PseudoItem(5, base_demand, 2.0, 1.0, 0.0, 0.0)


class TestSQAct:
    params = SQParams(10, 12)

    @pytest.mark.parametrize("on_hand, pipeline, expected", [
        (5, 0, 12),
        (11, 0, 0),
        (4, 7, 0),
        (9, 0, 12),
        (10, 0, 0),
        (3, 6, 12),
    ])
    def test_examples(self, on_hand, pipeline, expected):
        assert sq_act(self.params, _obs(on_hand, pipeline))[0] == expected

    def test_ignores_shelf_life(self):
        a, b = _obs(5), _obs(5)
        b.stock[0, :5] = [1, 1, 1, 1, 1]
        assert sq_act(self.params, a)[0] == sq_act(self.params, b)[0]

    def test_negative_params_rejected(self):
        with pytest.raises(ValueError):
            SQParams(-1, 3)

    @given(st.integers(0, 30), st.integers(0, 40), st.integers(0, 50), st.integers(0, 20))
    @settings(max_examples=200, deadline=None)
    def test_order_rule(self, on_hand, pipeline, s, q):
        out = sq_act(SQParams(s, q), _obs(on_hand, pipeline))[0]
        assert out == (q if on_hand + pipeline < s else 0)


class TestCalibration:
    def test_daily_eight_units(self, monkeypatch):
        # one item with exactly 8 expected units per day
        cfg = StoreConfig()
        monkeypatch.setattr("retail_rl.policies.expected_daily_demand", lambda items, cfg: np.array([8.0]))
        params = calibrate_sq(ItemSet.from_items([_item(0.1)]), cfg)
        assert (params.s[0], params.q[0]) == (16, 8)

    def test_zero_demand(self):
        params = calibrate_sq(ItemSet.from_items([_item(0.0)]), StoreConfig())
        assert (params.s[0], params.q[0]) == (0, 0)

    def test_slow_mover_still_orders(self):
        params = calibrate_sq(ItemSet.from_items([_item(0.002)]), StoreConfig())
        assert params.q[0] >= 1 and params.s[0] >= 1

    def test_q_within_action_space(self):
        cfg = StoreConfig(max_order=5)
        params = calibrate_sq(ItemSet.from_items([_item(0.5)]), cfg)
        assert params.q[0] == 5

    def test_expected_demand_matches_forecast_units(self):
        items = generate_items(CopulaModel(), 5, np.random.default_rng(0))
        cfg = StoreConfig()
        t = np.arange(1, 366)
        manual = np.array([
            np.mean([market.item_purchase_probability(it, d, cfg.seasonality) for d in t]) for it in items
        ]) * sum(cfg.customers.mean)
        np.testing.assert_allclose(expected_daily_demand(items, cfg), manual, rtol=1e-12)

    def test_longer_lead_time_raises_threshold(self):
        items = generate_items(CopulaModel(), 20, np.random.default_rng(1))
        short = calibrate_sq(items, StoreConfig(lead_time=4))
        long = calibrate_sq(items, StoreConfig(lead_time=12))
        assert np.all(long.s >= short.s) and np.any(long.s > short.s)


class TestPolicies:
    def test_sq_policy_rejects_large_q(self):
        with pytest.raises(ValueError):
            SQPolicy(SQParams(5, 30), max_order=20)

    def test_sq_policy_in_env(self):
        items = generate_items(CopulaModel(), 10, np.random.default_rng(2))
        cfg = StoreConfig()
        env = StoreEnv(items, cfg, seed=0)
        pol = SQPolicy.calibrated(items, cfg)
        obs = env.observe()
        for _ in range(200):
            a = pol.act(obs)
            assert np.all((a >= 0) & (a <= cfg.max_order))
            obs, _ = env.step(a)
        assert np.all(env.totals["sold"] > 0)

    def test_constant_and_random(self):
        obs = _obs(0)
        assert ConstantPolicy(3).act(obs)[0] == 3
        a = RandomPolicy(20, seed=0).act(Observation(*(np.repeat(x, 500, 0) for x in (
            obs.stock, obs.shelf_life, obs.forecast, obs.cost, obs.price, obs.pipeline))))
        assert a.min() == 0 and a.max() == 20
