from __future__ import annotations

from decimal import Decimal

import numpy as np
import pytest

from liqstake.sim import AgentSpec, AssetSpec, DemandSpec, Scenario, ValidatorSpec
from liqstake.state import ProtocolParams


@pytest.fixture
def params():
    return ProtocolParams()


def random_scenario(seed: int) -> Scenario:
    """Randomized but fully seeded scenario: <= 6 assets, <= 20 agents,
    20..200 epochs, occasional slashing, wash pairs, and credit spending."""
    rng = np.random.default_rng(seed)
    n_pools = int(rng.integers(1, 6))
    epochs = int(rng.integers(20, 201))
    n_agents = int(rng.integers(1, 21))
    n_vals = int(rng.integers(1, 4))
    assets = [AssetSpec(symbol="NST", is_nst=True, vol=float(rng.uniform(0.1, 0.4)))]
    for i in range(n_pools):
        assets.append(
            AssetSpec(
                symbol=f"P{i}",
                price0=Decimal(repr(round(float(rng.uniform(0.2, 5.0)), 4))),
                vol=float(rng.uniform(0.0, 0.15)),
                drift=float(rng.uniform(-0.01, 0.01)),
            )
        )
    agents = tuple(
        AgentSpec(
            address=f"lp-{i}",
            endowment=Decimal(int(rng.integers(100, 20000))),
            arrival_epoch=int(rng.integers(0, max(1, epochs // 3))),
            lock_menu=(5, 20, 60),
        )
        for i in range(n_agents)
    )
    vals = tuple(
        ValidatorSpec(
            id=f"v{i}",
            direct_stake=Decimal(int(rng.integers(10000, 500000))),
            min_stake=Decimal(int(rng.integers(0, 5000))),
        )
        for i in range(n_vals)
    )
    return Scenario(
        seed=int(rng.integers(0, 2**63)),
        epochs=epochs,
        assets=tuple(assets),
        agents=agents,
        validators=vals,
        demand=DemandSpec(mean=float(rng.uniform(0.1, 0.9)), vol=float(rng.uniform(0.0, 0.2))),
        slash_prob=float(rng.uniform(0.0, 0.03)),
        credit_spend_rate=float(rng.uniform(0.0, 0.3)),
        wash_rate=float(rng.uniform(0.0, 0.2)),
    )


def small_scenario(seed: int = 7, epochs: int = 20, **kw) -> Scenario:
    defaults = dict(
        seed=seed,
        epochs=epochs,
        assets=(
            AssetSpec(symbol="NST", is_nst=True, vol=0.3),
            AssetSpec(symbol="ALPHA", price0=Decimal("2"), vol=0.05),
            AssetSpec(symbol="BETA", price0=Decimal("0.5"), vol=0.08),
        ),
        agents=(
            AgentSpec(address="lp-1", endowment=Decimal("5000")),
            AgentSpec(address="lp-2", endowment=Decimal("3000"), arrival_epoch=2),
        ),
        validators=(
            ValidatorSpec(id="v1", direct_stake=Decimal("100000")),
            ValidatorSpec(id="v2", direct_stake=Decimal("50000")),
        ),
        demand=DemandSpec(mean=0.6, vol=0.1),
        credit_spend_rate=0.05,
    )
    defaults.update(kw)
    return Scenario(**defaults)
