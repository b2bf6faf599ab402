"""Core domain types: assets, protocol parameters, reserves, prices, ledger.

The ledger is an immutable snapshot; the epoch pipeline (engine module)
builds a new one per epoch and never mutates its input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import TYPE_CHECKING, Mapping, Optional, Sequence

from .money import ONE, ZERO, dec, q

if TYPE_CHECKING:
    from .credits import CreditBook
    from .rewards import ControllerState
    from .staking import UnstakeTicket, Validator


class ProtocolError(Exception):
    """Base class for engine errors."""


class MissingPriceError(ProtocolError):
    def __init__(self, symbol: str, epoch: int):
        super().__init__(f"no price for asset {symbol!r} at epoch {epoch}")
        self.symbol = symbol
        self.epoch = epoch


@dataclass(frozen=True)
class AssetId:
    symbol: str
    is_nst: bool = False


@dataclass(frozen=True)
class Trade:
    timestep: int
    volume: Decimal  # signed: buys > 0, sells < 0
    price: Decimal


@dataclass(frozen=True)
class ProtocolParams:
    """All tunable protocol constants.

    Collateral curve: rho_min, eta, chi, b (chi >= b).
    Reward budget: zeta in (0, 1], theta >= 0, c odd, r_min, srr.
    Tenure sigmoid: k, nu > 0, e_mid.
    Target-efficiency controller: upsilon, psi > 0, q1, q2 > 0, b_lower,
    target_eff0, windows m_win < n_win.
    Lending-fee weights: w_floor > 0, g_factor > 0, kappa_w > 0.
    Stake-ratio / ceiling: w_nst_target in (0, 1], t_ratio in (0, 1).
    Slashing / liveness: varpi in [0, 1], liveness_safety, min_viable_nodes,
    lambda_liveness.
    Risk constraints: sigma_ceiling, es_limit, ci.
    Credits: gamma (scalar or per-symbol), round_len, credit_b0, credit_decay.
    """

    rho_min: Decimal = Decimal("1.25")
    eta: float = 1.0
    chi: float = 1.0
    b: float = 1.0
    zeta: float = 0.2
    theta: float = 1.0
    c: int = 1
    k: float = 1.0
    nu: float = 1.0
    e_mid: float = 10.0
    upsilon: float = 0.05
    psi: float = 0.05
    q1: float = 2.0
    q2: float = 2.0
    b_lower: float = 0.001
    w_floor: float = 1.0
    g_factor: float = 1.0
    kappa_w: float = 1.0
    w_nst_target: float = 0.75
    t_ratio: float = 0.25
    varpi: float = 0.05
    m_win: int = 3
    n_win: int = 9
    unstake_epochs: int = 2
    r_min: Decimal = ZERO
    sigma_ceiling: float = 0.5
    es_limit: float = 0.10
    ci: float = 0.95
    gamma: float | Mapping[str, float] = 0.02
    round_len: int = 10
    srr: Decimal = Decimal("0.01")
    accrual_epochs: Optional[int] = None
    extension_every: int = 1
    liveness_safety: float = 1.0
    min_viable_nodes: int = 1
    lambda_liveness: float = 0.05
    target_eff0: float = 0.5
    lock_floor_frac: float = 0.1
    credit_b0: Decimal = Decimal("100")
    credit_decay: float = 0.9

    def gamma_for(self, symbol: str) -> float:
        if isinstance(self.gamma, Mapping):
            return float(self.gamma.get(symbol, 0.0))
        return float(self.gamma)

    def violations(self) -> list[tuple[str, str]]:
        """Return (field, message) pairs for every violated invariant."""
        out: list[tuple[str, str]] = []
        if self.rho_min < 1:
            out.append(("params.rho_min", "rho_min must be >= 1"))
        if self.c % 2 != 1 or self.c <= 0:
            out.append(("params.c", "c must be an odd positive integer"))
        if self.chi < self.b:
            out.append(("params.chi", "chi must be >= b"))
        if not (0.0 < self.zeta <= 1.0):
            out.append(("params.zeta", "zeta must be in (0, 1]"))
        if self.theta < 0:
            out.append(("params.theta", "theta must be >= 0"))
        if self.nu <= 0:
            out.append(("params.nu", "nu must be > 0"))
        if self.upsilon <= 0:
            out.append(("params.upsilon", "upsilon must be > 0"))
        if self.psi <= 0:
            out.append(("params.psi", "psi must be > 0"))
        if self.q1 <= 0 or self.q2 <= 0:
            out.append(("params.q1", "q1 and q2 must be > 0"))
        if self.b_lower < 0:
            out.append(("params.b_lower", "b_lower must be >= 0"))
        if self.w_floor <= 0:
            out.append(("params.w_floor", "w_floor must be > 0"))
        if self.g_factor <= 0:
            out.append(("params.g_factor", "g_factor must be > 0"))
        if self.kappa_w <= 0:
            out.append(("params.kappa_w", "kappa_w must be > 0"))
        if not (0.0 < self.w_nst_target <= 1.0):
            out.append(("params.w_nst_target", "w_nst_target must be in (0, 1]"))
        if not (0.0 < self.t_ratio < 1.0):
            out.append(("params.t_ratio", "t_ratio must be in (0, 1)"))
        if not (0.0 <= self.varpi <= 1.0):
            out.append(("params.varpi", "varpi must be in [0, 1]"))
        if self.m_win < 1:
            out.append(("params.m_win", "m_win must be >= 1"))
        if self.n_win <= self.m_win:
            out.append(("params.n_win", "n_win must be > m_win"))
        if self.unstake_epochs < 0:
            out.append(("params.unstake_epochs", "unstake_epochs must be >= 0"))
        if self.r_min < 0:
            out.append(("params.r_min", "r_min must be >= 0"))
        if self.srr < 0:
            out.append(("params.srr", "srr must be >= 0"))
        if self.round_len < 1:
            out.append(("params.round_len", "round_len must be >= 1"))
        if self.extension_every < 0:
            out.append(("params.extension_every", "extension_every must be >= 0"))
        if not (0.0 <= self.target_eff0 <= 1.0):
            out.append(("params.target_eff0", "target_eff0 must be in [0, 1]"))
        if not (0.0 <= self.lock_floor_frac <= 1.0):
            out.append(("params.lock_floor_frac", "lock_floor_frac must be in [0, 1]"))
        if not (0.0 < self.credit_decay <= 1.0):
            out.append(("params.credit_decay", "credit_decay must be in (0, 1]"))
        if isinstance(self.gamma, Mapping):
            for sym, g in self.gamma.items():
                if not (0.0 <= g <= 1.0):
                    out.append((f"params.gamma.{sym}", "gamma must be in [0, 1]"))
        elif not (0.0 <= self.gamma <= 1.0):
            out.append(("params.gamma", "gamma must be in [0, 1]"))
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            msgs = "; ".join(f"{f}: {m}" for f, m in bad)
            raise ValueError(f"invalid protocol parameters: {msgs}")


@dataclass(frozen=True)
class ReserveState:
    """One collateral pool of LP tokens mapped to a validator.

    `owner` is the depositing address ("" for a pooled reserve); it keys
    tenure payouts and credit shares.
    """

    asset: AssetId
    validator: str
    size: Decimal  # LP tokens deposited
    loan: Decimal = ZERO  # NST borrowed against this reserve
    lock_start: int = 0
    lock_len: int = 0
    owner: str = ""

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.asset.symbol, self.validator, self.owner)


@dataclass
class PriceBook:
    """Per-asset price series (NST numeraire), trade tape, and spreads.

    The NST itself always prices at 1; an explicit series is not required.
    """

    prices: Mapping[str, Sequence[Decimal]]
    tape: Mapping[str, Sequence[Trade]] = field(default_factory=dict)
    spreads: Mapping[str, float] = field(default_factory=dict)
    nst_symbol: str = "NST"

    def has_price(self, symbol: str, epoch: int) -> bool:
        if symbol == self.nst_symbol:
            return True
        series = self.prices.get(symbol)
        return series is not None and 0 <= epoch < len(series)

    def price(self, symbol: str, epoch: int) -> Decimal:
        if symbol == self.nst_symbol:
            return ONE
        if not self.has_price(symbol, epoch):
            raise MissingPriceError(symbol, epoch)
        p = self.prices[symbol][epoch]
        if p <= 0:
            raise ValueError(f"non-positive price for {symbol!r} at epoch {epoch}")
        return p

    def log_returns(self, symbol: str, upto: int, window: int) -> list[float]:
        """Log returns of the last `window` price steps ending at `upto`."""
        import math

        lo = max(0, upto - window)
        out = []
        for e in range(lo + 1, upto + 1):
            if not (self.has_price(symbol, e) and self.has_price(symbol, e - 1)):
                break
            out.append(math.log(float(self.price(symbol, e)) / float(self.price(symbol, e - 1))))
        return out


@dataclass(frozen=True)
class Valuation:
    asset: str
    validator: str
    owner: str
    size: Decimal
    price: Decimal
    value: Decimal
    loan: Decimal
    under_collateralised: bool


@dataclass(frozen=True)
class ValuationReport:
    epoch: int
    entries: tuple[Valuation, ...]
    total_value: Decimal

    def by_asset(self) -> dict[str, Decimal]:
        out: dict[str, Decimal] = {}
        for v in self.entries:
            out[v.asset] = out.get(v.asset, ZERO) + v.value
        return out


@dataclass(frozen=True)
class EpochLedger:
    """Full protocol state snapshot at one epoch."""

    epoch: int
    reserves: tuple[ReserveState, ...]
    validators: tuple["Validator", ...]
    reward_pool: Decimal
    staking_rewards: Decimal  # SR accrued in this epoch
    eff_series: tuple[float, ...]  # CDA-level E, one entry per epoch
    pool_eff: Mapping[str, tuple[float, ...]]  # per-pool E histories
    controller: "ControllerState"
    target_weights: Mapping[str, float]  # w* including the NST
    credit: "CreditBook"
    total_direct_stake: Decimal
    unstake_queue: tuple["UnstakeTicket", ...] = ()

    def total_loan(self) -> Decimal:
        return sum((r.loan for r in self.reserves), ZERO)

    def loans_by_asset(self) -> dict[str, Decimal]:
        out: dict[str, Decimal] = {}
        for r in self.reserves:
            out[r.asset.symbol] = out.get(r.asset.symbol, ZERO) + r.loan
        return out

    def sizes_by_asset(self) -> dict[str, Decimal]:
        out: dict[str, Decimal] = {}
        for r in self.reserves:
            out[r.asset.symbol] = out.get(r.asset.symbol, ZERO) + r.size
        return out

    def replace(self, **kw) -> "EpochLedger":
        return replace(self, **kw)


def mark_to_market(ledger: EpochLedger, market: PriceBook, epoch: Optional[int] = None) -> ValuationReport:
    """Value every reserve at market prices; flag loans exceeding collateral value.

    Pure: neither the ledger nor the book is touched.
    """
    e = ledger.epoch if epoch is None else epoch
    entries = []
    total = ZERO
    for r in ledger.reserves:
        p = market.price(r.asset.symbol, e)
        value = q(r.size * p)
        entries.append(
            Valuation(
                asset=r.asset.symbol,
                validator=r.validator,
                owner=r.owner,
                size=r.size,
                price=p,
                value=value,
                loan=r.loan,
                under_collateralised=r.loan > value,
            )
        )
        total += value
    return ValuationReport(epoch=e, entries=tuple(entries), total_value=total)
