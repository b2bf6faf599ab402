from __future__ import annotations

from decimal import Decimal

import numpy as np
import pytest

from conftest import small_scenario
from liqstake.money import ZERO, dec
from liqstake.rewards import dra_feasibility, max_lock_reward
from liqstake.risk import ReturnWindow, objective_metrics
from liqstake.sim import DemandSpec, run
from liqstake.state import ProtocolParams


class TestReturnWindow:
    def test_volatility_delegates(self):
        win = ReturnWindow(returns={"A": [0.02, 0.0, -0.02]})
        assert win.volatility("A") == pytest.approx(0.02)

    def test_correlation_bounds(self):
        rng = np.random.default_rng(9)
        a = rng.normal(0, 0.1, 40)
        win = ReturnWindow(returns={"A": a, "B": a * 2.0})
        assert win.correlation("A", "B") == pytest.approx(1.0)
        win2 = ReturnWindow(returns={"A": a, "B": -a})
        assert win2.correlation("A", "B") == pytest.approx(-1.0)

    def test_degenerate_zero_vol(self):
        win = ReturnWindow(returns={"A": [0.0, 0.0, 0.0], "B": [0.01, 0.02, 0.0]})
        assert win.correlation("A", "B") == 0.0


class TestObjectiveMetrics:
    def test_weights_must_sum_to_one(self):
        tr = run(small_scenario(epochs=3))
        with pytest.raises(ValueError):
            objective_metrics(tr, 0.7, 0.7, tr.scenario.params)

    def test_zero_activity_trace(self):
        sc = small_scenario(epochs=5, agents=(), demand=DemandSpec(mean=0.0, vol=0.0), credit_spend_rate=0.0)
        tr = run(sc)
        rep = objective_metrics(tr, 0.5, 0.5, sc.params)
        assert rep.objective == 0.0
        assert rep.incentives_total == 0
        assert rep.kappa_freq == 1.0

    def test_objective_equals_hand_sum(self):
        sc = small_scenario(seed=23, epochs=8, slash_prob=0.0, credit_spend_rate=0.0)
        tr = run(sc)
        rep = objective_metrics(tr, 1.0, 0.0, sc.params)
        hand_value = sum((row.utilised_total for row in tr.rows[1:]), ZERO)
        assert rep.objective == pytest.approx(float(hand_value))
        assert rep.total_value == hand_value

    def test_budget_echo_holds_on_any_trace(self):
        tr = run(small_scenario(seed=41, epochs=30, slash_prob=0.05))
        rep = objective_metrics(tr, 0.5, 0.5, tr.scenario.params)
        assert rep.incentives_total <= rep.budget_total
        assert rep.budget_pass


class TestTraceFeasibilityReplay:
    def test_sim_trace_satisfies_recursion(self):
        sc = small_scenario(seed=19, epochs=25, slash_prob=0.0, credit_spend_rate=0.0)
        tr = run(sc)
        rewards = [r.reward_distributed for r in tr.rows]
        srs = [r.staking_rewards for r in tr.rows]
        rps = [r.reward_pool for r in tr.rows]
        rep = dra_feasibility(rewards, srs, rps, sc.params)
        assert rep.recursion_ok
        assert not rep.bounds_violations

def test_pool_headroom_equals_distributable():
    # max_lock_reward(R^X, IP^X) reproduces DR^X whenever DR <= R
    from liqstake.rewards import allocate_rewards

    plan = allocate_rewards({"A": dec(100), "B": dec(50)}, {"A": 2.0, "B": 1.0}, dec(90))
    for pool in plan.pools:
        assert max_lock_reward(pool.share, pool.interest_payable) == pool.distributable
