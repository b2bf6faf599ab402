"""Dynamic collateralisation: the deviation-priced rate, loan requoting,
the global borrow ceiling with its rate multiplier, asset qualification,
and the stake-ratio guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Mapping, Optional, Sequence

from .money import ONE, ZERO, dec, q
from .state import AssetId, PriceBook, ProtocolParams, ReserveState


class AssetNotAdmissibleError(ValueError):
    pass


@dataclass(frozen=True)
class CollateralQuote:
    asset: AssetId
    rho: Decimal  # rho_min + delta_rho, before the global multiplier
    delta_rho: Decimal
    multiplier_applied: Decimal = ONE

    @property
    def effective_rho(self) -> Decimal:
        return self.rho * self.multiplier_applied


def delta_rho(dev: float, params: ProtocolParams) -> float:
    """Surcharge eta * (e^{(chi + b*sign(dev)) * |dev|} - 1) for a relative
    weight deviation dev = (w - w*) / w*. Overflows to +inf, which callers
    treat as an unquotable (fully curtailed) asset."""
    sign = 0.0 if dev == 0.0 else math.copysign(1.0, dev)
    exponent = (params.chi + params.b * sign) * abs(dev)
    if exponent > 700.0:
        return math.inf
    return params.eta * (math.exp(exponent) - 1.0)


def collateral_rate(
    asset: AssetId,
    weights: Mapping[str, float],
    targets: Mapping[str, float],
    params: ProtocolParams,
) -> CollateralQuote:
    """Quote the collateralisation rate for one asset from its basket
    weight deviation. A zero target weight means the asset is not
    admissible as collateral."""
    target = targets.get(asset.symbol, 0.0)
    if target <= 0.0:
        raise AssetNotAdmissibleError(f"asset {asset.symbol!r} has target weight 0; not admissible as collateral")
    w = weights.get(asset.symbol, 0.0)
    dev = (w - target) / target
    raw = delta_rho(dev, params)
    if math.isinf(raw):
        surcharge = Decimal("Infinity")
    elif raw > 1e12:
        surcharge = dec(raw)  # beyond quantization relevance (and 50-digit precision)
    else:
        surcharge = q(raw)
    return CollateralQuote(asset=asset, rho=params.rho_min + surcharge, delta_rho=surcharge)


def loan_requote(reserve: ReserveState, quote: CollateralQuote, price: Decimal) -> Decimal:
    """Signed loan adjustment dL = S / rho * P - L_prev.

    Negative deltas curtail immediately; positive deltas are applied only
    when the epoch's extension window permits (the caller's step).
    """
    if price <= 0:
        raise ValueError("price must be > 0")
    rho = quote.effective_rho
    if rho < 1:
        raise ValueError("collateralisation rate must be >= 1")
    return q(reserve.size * price / rho) - reserve.loan


@dataclass(frozen=True)
class BorrowCeiling:
    ceiling: Decimal  # T_e
    w_nst: Optional[float]  # 1 - L / total direct stake, None when stake is 0

    def satisfied(self, params: ProtocolParams) -> bool:
        return self.w_nst is None or self.w_nst >= params.w_nst_target


def borrow_ceiling(total_direct_stake: Decimal, params: ProtocolParams, current_loan: Decimal = ZERO) -> BorrowCeiling:
    """T_e = direct stake * (1 - w*_NST), with the current NST weight report."""
    if total_direct_stake < 0:
        raise ValueError("total_direct_stake must be >= 0")
    ceiling = q(total_direct_stake * (ONE - dec(params.w_nst_target)))
    w_nst = None if total_direct_stake == 0 else float(ONE - current_loan / total_direct_stake)
    return BorrowCeiling(ceiling=ceiling, w_nst=w_nst)


def global_multiplier(implied_loans: Sequence[Decimal], ceiling: Decimal) -> Decimal:
    """Rate multiplier m = max(1, sum(S*P/rho) / T) scaling every quote so
    the total borrowable amount meets the ceiling.

    A zero ceiling against nonzero collateral returns infinity: every loan
    is curtailed.
    """
    implied = sum(implied_loans, ZERO)
    if implied <= 0:
        return ONE
    if ceiling <= 0:
        return Decimal("Infinity")
    return max(ONE, implied / ceiling)


@dataclass(frozen=True)
class QualificationRule:
    min_liquidity: Decimal = ZERO  # total absolute tape volume over the lookback
    max_volatility: float = math.inf
    lookback: int = 2
    extra: tuple[tuple[str, Callable[[PriceBook], bool]], ...] = ()


@dataclass(frozen=True)
class QualificationResult:
    admissible: bool
    failed: tuple[str, ...]


def qualify_asset(asset: AssetId, history: PriceBook, rules: QualificationRule) -> QualificationResult:
    """Conjunction of admission predicates over the price/tape history."""
    import numpy as np

    failed: list[str] = []
    series = history.prices.get(asset.symbol, ())
    if len(series) < rules.lookback + 1:
        return QualificationResult(admissible=False, failed=("insufficient_history",))

    upto = len(series) - 1
    rets = history.log_returns(asset.symbol, upto, rules.lookback)
    if len(rets) >= 2:
        sigma = float(np.std(rets, ddof=1))
        if sigma > rules.max_volatility:
            failed.append("max_volatility")
    tape = history.tape.get(asset.symbol, ())
    volume = sum((abs(t.volume) for t in tape), ZERO)
    if volume < rules.min_liquidity:
        failed.append("min_liquidity")
    for name, predicate in rules.extra:
        if not predicate(history):
            failed.append(name)
    return QualificationResult(admissible=not failed, failed=tuple(failed))


def stake_ratio_check(v_ma: Decimal, v_nst: Decimal, params: ProtocolParams) -> bool:
    """True iff V_MA / (V_MA + V_NST) < T. Vacuously true when both are zero."""
    if v_ma < 0 or v_nst < 0:
        raise ValueError("staked values must be >= 0")
    total = v_ma + v_nst
    if total == 0:
        return True
    return v_ma / total < dec(params.t_ratio)
