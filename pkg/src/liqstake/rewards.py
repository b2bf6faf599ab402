"""Budgeted reward allocation: capital-efficiency tracking, the epoch
reward budget, the target-efficiency controller, the variable lending fee
chain (weights -> distributable rewards -> interest), tenure incentives,
and present value of forward incentives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .money import TOL, ZERO, dec, q
from .state import ProtocolParams


def capital_efficiency(liq_available, liq_deposited) -> float:
    """E = max((L_dep - L_avail) / L_dep, 0): share of deposited capital in use."""
    dep = float(liq_deposited)
    if dep <= 0.0:
        raise ValueError("capital efficiency undefined for zero deposited capital")
    return max((dep - float(liq_available)) / dep, 0.0)


def capital_efficiency_fees(fees, rewards) -> float:
    """Alternative definition: fees earned per unit of reward distributed."""
    r = float(rewards)
    if r <= 0.0:
        raise ValueError("fee-based capital efficiency undefined for zero rewards")
    return float(fees) / r


def seeded_ma(series: Sequence[float], window: int, at: Optional[int] = None) -> float:
    """Simple moving average; the window is padded with the first value
    until `window` samples exist."""
    if window < 1:
        raise ValueError("window must be >= 1")
    idx = len(series) - 1 if at is None else at
    if idx < 0 or not series:
        raise ValueError("moving average needs a nonempty series")
    vals = [series[max(0, i)] if i >= 0 else series[0] for i in range(idx - window + 1, idx + 1)]
    return sum(vals) / window


@dataclass(frozen=True)
class MovingStats:
    ma_m: float
    ma_n: float
    d1_m: Optional[float]
    d2_m: Optional[float]
    d1_n: Optional[float]
    d2_n: Optional[float]

    @property
    def complete(self) -> bool:
        return None not in (self.d1_m, self.d2_m, self.d1_n, self.d2_n)


def moving_average_and_derivatives(series: Sequence[float], m: int, n: int) -> MovingStats:
    """Moving averages over the m and n windows plus discrete derivatives.

    First derivative: MA_e - MA_{e-1}. Second: MA_e + MA_{e-2} - 2 MA_{e-1}.
    Derivatives are absent until enough epochs exist; the controller then
    accumulates nothing and holds.
    """
    e = len(series) - 1

    def stats(window: int) -> tuple[float, Optional[float], Optional[float]]:
        ma = seeded_ma(series, window, e)
        d1 = d2 = None
        if e >= 1:
            prev = seeded_ma(series, window, e - 1)
            d1 = ma - prev
            if e >= 2:
                d2 = ma + seeded_ma(series, window, e - 2) - 2.0 * prev
        return ma, d1, d2

    ma_m, d1_m, d2_m = stats(m)
    ma_n, d1_n, d2_n = stats(n)
    return MovingStats(ma_m=ma_m, ma_n=ma_n, d1_m=d1_m, d2_m=d2_m, d1_n=d1_n, d2_n=d2_n)


@dataclass(frozen=True)
class ControllerState:
    """Target capital-efficiency rate plus derivative accumulators."""

    target: float
    d1_m: float = 0.0
    d1_n: float = 0.0
    d2_m: float = 0.0
    d2_n: float = 0.0


def controller_update(state: ControllerState, stats: MovingStats, params: ProtocolParams) -> ControllerState:
    """One decision step of the target-efficiency controller.

    Above the first-derivative bound in both windows, the target moves
    against the efficiency trend (down when rising, up when falling), at
    full speed when the second derivatives agree and damped by
    q * |disagreement| otherwise; accumulators reset after any
    bound-cleared decision. Below the bound all four accumulators grow by
    the current derivatives and the target holds.
    """
    if not stats.complete:
        return state

    d1m, d2m, d1n, d2n = stats.d1_m, stats.d2_m, stats.d1_n, stats.d2_n
    cleared = params.b_lower <= max(abs(d1m), abs(state.d1_m)) and params.b_lower <= max(abs(d1n), abs(state.d1_n))
    if not cleared:
        return replace(
            state,
            d1_m=state.d1_m + d1m,
            d1_n=state.d1_n + d1n,
            d2_m=state.d2_m + d2m,
            d2_n=state.d2_n + d2n,
        )

    pm = max(d1m, state.d1_m)
    pn = max(d1n, state.d1_n)
    am = max(d2m, state.d2_m)
    an = max(d2n, state.d2_n)
    target = state.target
    if pm > 0.0 and pn > 0.0:
        if am >= 0.0 and an >= 0.0:
            target -= params.upsilon
        else:
            target -= params.upsilon / max(params.q1 * abs(am - an), 1.0)
    elif pm < 0.0 and pn < 0.0:
        if am <= 0.0 and an <= 0.0:
            target += params.psi
        else:
            target += params.psi / max(params.q2 * abs(am - an), 1.0)
    target = min(1.0, max(0.0, target))
    return ControllerState(target=target)


def epoch_reward_budget(
    loan: Decimal,
    srr,
    eff_ma: float,
    target: float,
    pool: Decimal,
    params: ProtocolParams,
) -> Decimal:
    """R = min(SRR * L * max(zeta, 1 - theta*(target - eff)^c), RP),
    floored at min(r_min, RP). Front-loads incentives when efficiency runs
    above target."""
    factor = max(params.zeta, 1.0 - params.theta * (target - eff_ma) ** params.c)
    r = q(dec(srr) * loan * dec(factor))
    r = min(r, pool)
    return max(r, min(params.r_min, pool))


def pool_weight(eff_pool: float, eff_max: float, eff_min: float, params: ProtocolParams) -> float:
    """Convex weight between floor and ceil rising with pool efficiency.

    W = floor + (ceil - floor) * (1 - ((max - e)/(max - min))^kappa),
    ceil = floor * (1 + g). Degenerate spread gives every pool the ceiling.
    """
    if eff_max < eff_min:
        raise ValueError("eff_max must be >= eff_min")
    w_lo = params.w_floor
    w_hi = params.w_floor * (1.0 + params.g_factor)
    spread = eff_max - eff_min
    if spread < 1e-12:
        return w_hi
    if eff_pool < eff_min - 1e-12 or eff_pool > eff_max + 1e-12:
        raise ValueError(f"pool efficiency {eff_pool} outside [{eff_min}, {eff_max}]")
    frac = min(1.0, max(0.0, (eff_max - eff_pool) / spread))
    return w_lo + (w_hi - w_lo) * (1.0 - frac**params.kappa_w)


@dataclass(frozen=True)
class PoolReward:
    symbol: str
    loan: Decimal
    weight: float
    share: Decimal  # pro-rata staking reward R^j
    distributable: Decimal  # DR^j
    interest: float  # I^j = 1 - DR/R
    interest_payable: Decimal  # IP^j = R^j - DR^j


@dataclass(frozen=True)
class RewardPlan:
    budget: Decimal
    pools: tuple[PoolReward, ...]

    @property
    def distributed(self) -> Decimal:
        return sum((p.distributable for p in self.pools), ZERO)

    @property
    def interest_total(self) -> Decimal:
        return sum((p.interest_payable for p in self.pools), ZERO)


def exact_shares(budget: Decimal, shares: Mapping) -> dict:
    """Split budget by `shares` (any sortable keys); the largest share
    absorbs the remainder so the parts sum to the budget exactly."""
    total = sum(shares.values(), ZERO)
    if total <= 0:
        return {k: ZERO for k in shares}
    largest = max(sorted(shares), key=lambda k: shares[k])
    out: dict[str, Decimal] = {}
    rest = ZERO
    for sym in sorted(shares):
        if sym == largest:
            continue
        out[sym] = q(shares[sym] / total * budget)
        rest += out[sym]
    out[largest] = budget - rest
    return out


def allocate_rewards(loans: Mapping[str, Decimal], weights: Mapping[str, float], budget: Decimal) -> RewardPlan:
    """Allocate one epoch's budget across pools.

    DR^j = L^j W^j / sum(L W) * R, each pool's pro-rata share is
    R^j = R * L^j / L, the interest rate is I^j = 1 - DR^j/R^j and the
    nominal interest payable IP^j = R^j * I^j = R^j - DR^j. Sums are
    exact: sum DR = R and sum IP = 0.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    live = {s: loans[s] for s in loans if loans[s] > 0}
    if not live:
        return RewardPlan(budget=budget, pools=())
    weighted = {s: live[s] * dec(weights[s]) for s in live}
    dr = exact_shares(budget, weighted)
    share = exact_shares(budget, live)
    pools = []
    for sym in sorted(live):
        r_j = share[sym]
        dr_j = dr[sym]
        interest = float(1 - dr_j / r_j) if r_j > 0 else 0.0
        pools.append(
            PoolReward(
                symbol=sym,
                loan=live[sym],
                weight=weights[sym],
                share=r_j,
                distributable=dr_j,
                interest=interest,
                interest_payable=r_j - dr_j,
            )
        )
    return RewardPlan(budget=budget, pools=tuple(pools))


def tenure_incentive(elapsed: float, i_min: float, i_max: float, k: float, mid: float, shape: float) -> float:
    """Min-anchored sigmoid: i_min + (i_max - i_min) / (1 + e^{-k(t-mid)})^shape.

    Strictly increasing in the locked time, approaching i_max.
    """
    if i_max < i_min:
        raise ValueError("i_max must be >= i_min")
    if shape <= 0:
        raise ValueError("shape must be > 0")
    x = -k * (elapsed - mid)
    log_denom = shape * (x if x > 35.0 else math.log1p(math.exp(x)))
    return i_min + (i_max - i_min) * math.exp(-log_denom)


def max_lock_reward(staking_rewards_distributed, interest_charged) -> Decimal:
    """Headroom available for locking rewards, floored at zero."""
    return max(dec(staking_rewards_distributed) - dec(interest_charged), ZERO)


def present_value(
    incentive_curve: Callable[[float], float],
    rate_curve: Callable[[float], float],
    horizon: float,
    steps: int = 256,
) -> float:
    """PV = integral of I(t) * exp(-integral of IR(u) du) over [0, horizon].

    Trapezoidal quadrature at `steps` subdivisions.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return 0.0
    t = np.linspace(0.0, horizon, steps + 1)
    dt = horizon / steps
    inc = np.array([incentive_curve(x) for x in t], dtype=float)
    ir = np.array([rate_curve(x) for x in t], dtype=float)
    cum = np.concatenate(([0.0], np.cumsum((ir[1:] + ir[:-1]) * 0.5 * dt)))
    disc = np.exp(-cum)
    return float(np.trapezoid(inc * disc, dx=dt))


@dataclass(frozen=True)
class FeasibilityReport:
    bounds_violations: tuple[int, ...]  # epochs where the budget bounds fail
    conservation_ok: bool  # lifetime sum R == sum SR
    recursion_ok: bool  # RP_e == cum SR - cum R at every epoch
    passed: bool


def dra_feasibility(
    reward_series: Sequence[Decimal],
    sr_series: Sequence[Decimal],
    rp_series: Sequence[Decimal],
    params: ProtocolParams,
) -> FeasibilityReport:
    """Check the budget-allocation constraints over an aligned epoch series.

    rp_series holds end-of-epoch pool levels; the pre-distribution pool is
    RP_e + R_e. Verifies min(r_min, RP) <= R_e <= RP per epoch, the
    lifetime conservation sum R = sum SR, and the pool recursion
    RP_e = cumulative SR - cumulative R.
    """
    if not (len(reward_series) == len(sr_series) == len(rp_series)):
        raise ValueError("series must align")
    violations = []
    cum_sr = ZERO
    cum_r = ZERO
    recursion_ok = True
    for e, (r, sr, rp) in enumerate(zip(reward_series, sr_series, rp_series)):
        pre_pool = rp + r
        if r > pre_pool + TOL or r + TOL < min(params.r_min, pre_pool):
            violations.append(e)
        cum_sr += sr
        cum_r += r
        if abs(rp - (cum_sr - cum_r)) > TOL:
            recursion_ok = False
    conservation_ok = abs(cum_r - cum_sr) <= TOL
    return FeasibilityReport(
        bounds_violations=tuple(violations),
        conservation_ok=conservation_ok,
        recursion_ok=recursion_ok,
        passed=not violations and conservation_ok and recursion_ok,
    )
