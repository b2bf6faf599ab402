"""Risk analytics: volatility, portfolio variance, expected shortfall,
liquidity risk, wash-trade detection, the target-weight optimiser, and the
ex-post objective/constraint metrics evaluator.

Everything here is float-domain and pure; money stays Decimal elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

import numpy as np

from .money import ZERO, dec
from .state import AssetId, ProtocolParams, Trade

if TYPE_CHECKING:
    from .sim import Trace

_VOLUME_TOL = Decimal("1e-12")


class InsufficientSamplesError(ValueError):
    pass


class InfeasibleWeightsError(ValueError):
    pass


@dataclass
class ReturnWindow:
    """Per-asset return samples over a common window."""

    returns: Mapping[str, Sequence[float]]

    def volatility(self, symbol: str) -> float:
        return realized_volatility(self.returns[symbol])

    def correlation(self, a: str, b: str) -> float:
        ra = np.asarray(self.returns[a], dtype=float)
        rb = np.asarray(self.returns[b], dtype=float)
        if len(ra) != len(rb) or len(ra) < 2:
            raise InsufficientSamplesError("correlation needs two aligned samples")
        sa, sb = ra.std(ddof=1), rb.std(ddof=1)
        if sa == 0.0 or sb == 0.0:
            return 0.0
        cov = float(((ra - ra.mean()) * (rb - rb.mean())).sum() / (len(ra) - 1))
        return min(1.0, max(-1.0, cov / (sa * sb)))


def realized_volatility(returns: Sequence[float]) -> float:
    """Sample standard deviation of a return series (N-1 denominator)."""
    n = len(returns)
    if n < 2:
        raise InsufficientSamplesError("volatility needs at least 2 returns")
    arr = np.asarray(returns, dtype=float)
    return float(arr.std(ddof=1))


def portfolio_variance(weights: Sequence[float], vols: Sequence[float], correlations) -> float:
    """sigma_p^2 = sum_b sum_j w_b w_j rho_bj sigma_b sigma_j."""
    w = np.asarray(weights, dtype=float)
    s = np.asarray(vols, dtype=float)
    rho = np.asarray(correlations, dtype=float)
    if rho.shape != (len(w), len(w)) or len(s) != len(w):
        raise ValueError("weights, vols and correlation matrix dimensions disagree")
    cov = rho * np.outer(s, s)
    return float(w @ cov @ w)


def _tail_size(n: int, ci: float) -> int:
    return max(1, math.ceil((1.0 - ci) * n - 1e-9))


def _tail_mean(returns: Sequence[float], ci: float) -> float:
    """Mean of the worst ceil((1-ci)*N) returns, reported as positive loss."""
    arr = np.sort(np.asarray(returns, dtype=float))
    k = _tail_size(len(arr), ci)
    return float(-arr[:k].mean())


def expected_shortfall(portfolio_returns: Sequence[float], ci: float) -> float:
    """Historical-simulation expected shortfall at confidence level ci.

    The tail is the ceil((1-ci)*N) worst samples; the result is the mean
    tail loss with losses positive. Requires N >= ceil(1/(1-ci)).
    """
    if not (0.0 < ci < 1.0):
        raise ValueError("ci must be in (0, 1)")
    n = len(portfolio_returns)
    required = math.ceil(1.0 / (1.0 - ci) - 1e-9)
    if n < required:
        raise InsufficientSamplesError(f"expected shortfall at ci={ci} needs at least {required} samples, got {n}")
    return _tail_mean(portfolio_returns, ci)


def value_at_risk(portfolio_returns: Sequence[float], ci: float) -> float:
    """Historical VaR at ci (positive loss convention)."""
    arr = np.sort(np.asarray(portfolio_returns, dtype=float))
    k = _tail_size(len(arr), ci)
    return float(-arr[k - 1])


def liquidity_risk(spread: float, volume_window: float, order_size: float, impact_coeff: float = 1.0) -> float:
    """LR = Sp/2 + impact_coeff * Q / V.

    Monotone increasing in order size and spread, decreasing in volume.
    Zero traded volume with a live order signals infinite viscosity.
    """
    if order_size == 0.0:
        return spread / 2.0
    if volume_window <= 0.0:
        return math.inf
    return spread / 2.0 + impact_coeff * order_size / volume_window


@dataclass(frozen=True)
class WashFlag:
    first: int
    second: int


def detect_wash_trades(tape: Sequence[Trade], price_tol, window: int = 1) -> tuple[WashFlag, ...]:
    """Flag opposite-sign trade pairs with equal absolute volume and ~no price move.

    Pairs are searched within `window` tape positions; each trade joins at
    most one flagged pair. The tape must be timestep-ordered.
    """
    tol = dec(price_tol)
    flags: list[WashFlag] = []
    used: set[int] = set()
    for i, t in enumerate(tape):
        if i in used or t.volume == 0:
            continue
        for j in range(i + 1, min(i + window + 1, len(tape))):
            if j in used:
                continue
            u = tape[j]
            if (t.volume > 0) == (u.volume > 0):
                continue
            if abs(abs(t.volume) - abs(u.volume)) > _VOLUME_TOL:
                continue
            if abs(t.price - u.price) > tol:
                continue
            flags.append(WashFlag(i, j))
            used.add(i)
            used.add(j)
            break
    return tuple(flags)


@dataclass(frozen=True)
class TargetWeights:
    weights: Mapping[str, float]
    achieved_variance: float
    es_achieved: Optional[float] = None

    def as_array(self, symbols: Sequence[str]) -> np.ndarray:
        return np.array([self.weights[s] for s in symbols], dtype=float)


def _project_capped_simplex(y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w: lo <= w <= hi, sum w = 1} by bisection."""
    a = float(np.min(y - hi)) - 1.0
    b = float(np.max(y - lo)) + 1.0
    for _ in range(100):
        tau = 0.5 * (a + b)
        s = float(np.clip(y - tau, lo, hi).sum())
        if s > 1.0:
            a = tau
        else:
            b = tau
    return np.clip(y - 0.5 * (a + b), lo, hi)


def _es_and_subgrad(w: np.ndarray, returns: np.ndarray, ci: float) -> tuple[float, np.ndarray]:
    port = returns @ w
    order = np.argsort(port, kind="stable")
    k = _tail_size(len(port), ci)
    tail = order[:k]
    es = float(-port[tail].mean())
    grad = -returns[tail].mean(axis=0)
    return es, grad


def target_weights(
    assets: Sequence[AssetId],
    vols: Sequence[float],
    correlations,
    params: ProtocolParams,
    returns: Optional[np.ndarray] = None,
) -> TargetWeights:
    """Minimum-variance target basket with the NST floor, the per-asset
    volatility cap, and (when return samples are supplied) the historical
    expected-shortfall limit.

    Deterministic projected-gradient descent started at the NST-floor
    corner, fixed iteration budget, penalty escalation for the ES
    constraint followed by a feasibility polish along the segment toward
    the minimum-ES point.
    """
    n = len(assets)
    if n == 0 or len(vols) != n:
        raise ValueError("assets and vols must align")
    nst_idx = [i for i, a in enumerate(assets) if a.is_nst]
    if len(nst_idx) != 1:
        raise InfeasibleWeightsError("exactly one asset must be the native staking token")
    nst = nst_idx[0]
    floor = params.w_nst_target
    if floor > 1.0:
        raise InfeasibleWeightsError(f"w_nst_target={floor} exceeds 1")

    s = np.asarray(vols, dtype=float)
    rho = np.asarray(correlations, dtype=float)
    if rho.shape != (n, n):
        raise ValueError("correlation matrix dimensions disagree")
    cov = rho * np.outer(s, s)

    lo = np.zeros(n)
    hi = np.ones(n)
    lo[nst] = floor
    for i in range(n):
        if i != nst and s[i] > params.sigma_ceiling:
            hi[i] = 0.0  # volatility filter: weight forced to zero
    if float(lo.sum()) > 1.0 + 1e-12 or float(hi.sum()) < 1.0 - 1e-12:
        raise InfeasibleWeightsError("no weight vector satisfies the floor and volatility filter")

    admissible = [i for i in range(n) if i != nst and hi[i] > 0.0]
    w = np.zeros(n)
    w[nst] = floor
    if admissible:
        w[admissible] = (1.0 - floor) / len(admissible)
    else:
        w[nst] = 1.0
    w = _project_capped_simplex(w, lo, hi)

    eigmax = float(np.max(np.linalg.eigvalsh(cov))) if n > 1 else float(cov[0, 0])
    step = 1.0 / max(2.0 * eigmax, 1e-9)

    budget = 10_000
    tol = 1e-8
    mu = 0.0
    schedule = [0.0]
    if returns is not None:
        returns = np.asarray(returns, dtype=float)
        schedule = [0.0, 1e2, 1e4, 1e6, 1e8, 1e10]
    per_phase = budget // len(schedule)

    for mu in schedule:
        for _ in range(per_phase):
            grad = 2.0 * (cov @ w)
            if mu > 0.0:
                es, gsub = _es_and_subgrad(w, returns, params.ci)
                viol = es - params.es_limit
                if viol > 0.0:
                    grad = grad + 2.0 * mu * viol * gsub
            eff_step = step if mu == 0.0 else min(step, 1.0 / (2.0 * mu + 1.0 / step))
            w_new = _project_capped_simplex(w - eff_step * grad, lo, hi)
            if float(np.abs(w_new - w).max()) < tol:
                w = w_new
                break
            w = w_new
        if returns is None or _es_and_subgrad(w, returns, params.ci)[0] <= params.es_limit:
            break

    es_achieved = None
    if returns is not None:
        es_achieved = _es_and_subgrad(w, returns, params.ci)[0]
        if es_achieved > params.es_limit:
            anchor = _min_es_point(returns, params.ci, lo, hi)
            es_anchor = _es_and_subgrad(anchor, returns, params.ci)[0]
            if es_anchor > params.es_limit + 1e-12:
                raise InfeasibleWeightsError(
                    f"expected-shortfall limit {params.es_limit} unattainable (best {es_anchor:.6f})"
                )
            a, b = 0.0, 1.0  # bisect toward the feasible anchor
            for _ in range(80):
                mid = 0.5 * (a + b)
                cand = w + mid * (anchor - w)
                if _es_and_subgrad(cand, returns, params.ci)[0] <= params.es_limit:
                    b = mid
                else:
                    a = mid
            w = w + b * (anchor - w)
            es_achieved = _es_and_subgrad(w, returns, params.ci)[0]

    weights = {assets[i].symbol: float(w[i]) for i in range(n)}
    return TargetWeights(weights=weights, achieved_variance=float(w @ cov @ w), es_achieved=es_achieved)


def _min_es_point(returns: np.ndarray, ci: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Approximate ES minimiser over the constrained simplex (subgradient)."""
    n = returns.shape[1]
    w = _project_capped_simplex(np.full(n, 1.0 / n), lo, hi)
    best, best_es = w.copy(), _es_and_subgrad(w, returns, ci)[0]
    for t in range(2000):
        es, g = _es_and_subgrad(w, returns, ci)
        if es < best_es:
            best, best_es = w.copy(), es
        w = _project_capped_simplex(w - 0.1 / math.sqrt(t + 1.0) * g, lo, hi)
    return best


@dataclass(frozen=True)
class MetricsReport:
    """Ex-post trace metrics: objective value and constraint frequencies."""

    objective: float
    total_value: Decimal
    total_variance: float
    kappa_freq: float
    kappa_limit: float
    alpha: float
    kappa_pass: bool
    cvar: float
    cvar_limit: float
    cvar_pass: bool
    incentives_total: Decimal
    budget_total: Decimal
    budget_pass: bool


def objective_metrics(
    trace: "Trace",
    w1: float,
    w2: float,
    params: ProtocolParams,
    kappa_limit: float = 1.0,
    cvar_limit: float = 1.0,
    alpha: float = 0.95,
) -> MetricsReport:
    """Evaluate the trade-off objective and risk constraints over a trace.

    Pure reporting, no optimisation. Estimators: per-asset vols and
    correlations from trailing n_win log returns; nominal per-epoch basket
    variance = (basket value)^2 * fractional portfolio variance; the
    per-pool risk measure aggregated against kappa_limit is trailing
    historical ES at params.ci; the incentive-portfolio cVaR at 0.99 is
    the tail mean of the realised per-epoch basket returns.
    """
    if abs(w1 + w2 - 1.0) > 1e-9:
        raise ValueError("objective weights must sum to 1")

    win = params.n_win
    total_value = ZERO
    total_variance = 0.0
    kappa_ok = 0
    port_returns: list[float] = []
    epochs = 0

    for row in trace.rows[1:]:
        epochs += 1
        total_value += row.utilised_total
        values = row.values_by_asset
        basket = sum((v for v in values.values()), ZERO)
        syms = sorted(values)
        if basket > 0 and syms:
            weights = [float(values[s] / basket) for s in syms]
            rets = {s: trace.market.log_returns(s, row.epoch, win) for s in syms}
            vols = [np.std(rets[s], ddof=1) if len(rets[s]) >= 2 else 0.0 for s in syms]
            m = len(syms)
            corr = np.eye(m)
            for i in range(m):
                for j in range(i + 1, m):
                    ri, rj = rets[syms[i]], rets[syms[j]]
                    k = min(len(ri), len(rj))
                    if k >= 2:
                        a = np.asarray(ri[-k:])
                        b = np.asarray(rj[-k:])
                        sa, sb = a.std(ddof=1), b.std(ddof=1)
                        if sa > 0 and sb > 0:
                            corr[i, j] = corr[j, i] = float(
                                np.clip(((a - a.mean()) * (b - b.mean())).sum() / ((k - 1) * sa * sb), -1, 1)
                            )
            frac_var = portfolio_variance(weights, [float(v) for v in vols], corr)
            total_variance += float(basket) ** 2 * frac_var
            kappa_sum = 0.0
            for sym in syms:
                r = rets[sym]
                if r:
                    kappa_sum += _tail_mean(r, params.ci)
            if kappa_sum <= kappa_limit:
                kappa_ok += 1
            step_ret = 0.0
            for i, sym in enumerate(syms):
                r = trace.market.log_returns(sym, row.epoch, 1)
                step_ret += weights[i] * (r[-1] if r else 0.0)
            port_returns.append(step_ret)
        else:
            kappa_ok += 1  # empty basket carries no risk

    incentives = sum((row.reward_distributed for row in trace.rows), ZERO)
    budget = sum((row.staking_rewards for row in trace.rows), ZERO)
    cvar = _tail_mean(port_returns, 0.99) if port_returns else 0.0
    kappa_freq = kappa_ok / epochs if epochs else 1.0
    objective = w1 * float(total_value) - w2 * total_variance
    return MetricsReport(
        objective=objective,
        total_value=total_value,
        total_variance=total_variance,
        kappa_freq=kappa_freq,
        kappa_limit=kappa_limit,
        alpha=alpha,
        kappa_pass=kappa_freq >= alpha,
        cvar=cvar,
        cvar_limit=cvar_limit,
        cvar_pass=cvar <= cvar_limit,
        incentives_total=incentives,
        budget_total=budget,
        budget_pass=incentives <= budget + Decimal("1e-9"),
    )
