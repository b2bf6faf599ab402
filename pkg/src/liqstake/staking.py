"""Validator bookkeeping: delegation ceilings, slashing, the unstaking
queue, and staking-reward accrual. Validators here are accounting
entities; no consensus logic exists or is intended.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from decimal import Decimal
from typing import Mapping, Optional, Sequence

from .money import ZERO, dec, q
from .state import ProtocolParams, ReserveState


class OverWithdrawalError(ValueError):
    pass


@dataclass(frozen=True)
class Validator:
    id: str
    direct_stake: Decimal
    min_stake_req: Decimal = ZERO
    active: bool = True


@dataclass(frozen=True)
class UnstakeTicket:
    amount: Decimal
    request_epoch: int
    release_epoch: int


def liveness_ceiling(validator: Validator, min_viable_nodes: int, params: ProtocolParams) -> Decimal:
    """Delegation ceiling C = max(0, safety * (direct stake - min requirement)).

    Delegation beyond C is rejected so a validator never depends on
    borrowed stake to stay above its minimum. min_viable_nodes is carried
    for the network-level liveness report; it does not change the
    per-validator headroom.
    """
    if not validator.active:
        return ZERO
    headroom = validator.direct_stake - validator.min_stake_req
    return max(ZERO, q(dec(params.liveness_safety) * headroom))


@dataclass(frozen=True)
class SlashReport:
    validator: str
    rate: float
    loan_before: Decimal
    loan_after: Decimal
    slashed: Decimal  # NST value removed from the loan
    reserve_cuts: Mapping[tuple[str, str, str], Decimal]  # reserve key -> token reduction
    shortfall: Decimal  # value that could not be covered by collateral


def slash(
    validator: Validator,
    reserves: Sequence[ReserveState],
    prices: Mapping[str, Decimal],
    varpi: float,
) -> tuple[list[ReserveState], SlashReport]:
    """Slash the loans delegated to a validator at rate varpi.

    The post-slash loan level is L_prev * (1 - varpi); the slashed value
    L_prev * varpi is removed from the validator's reserves pro-rata by
    marked value, converted to tokens at each reserve's price. A reserve
    whose value cannot cover its share is zeroed and the shortfall
    reported.
    """
    if not (0.0 <= varpi <= 1.0):
        raise ValueError("varpi must be in [0, 1]")
    mine = [r for r in reserves if r.validator == validator.id]
    loan_before = sum((r.loan for r in mine), ZERO)
    slashed = q(loan_before * dec(varpi))
    values = {}
    for r in mine:
        p = prices[r.asset.symbol]
        if p <= 0:
            raise ValueError(f"non-positive price for {r.asset.symbol!r}")
        values[r.key] = q(r.size * p)
    total_value = sum(values.values(), ZERO)

    cuts: dict[tuple[str, str, str], Decimal] = {}
    shortfall = ZERO
    updated: list[ReserveState] = []
    if slashed > 0 and total_value > 0:
        # exact split of the slashed value; the largest reserve absorbs rounding
        keys = sorted(values)
        largest = max(keys, key=lambda k: values[k])
        value_cuts: dict[tuple[str, str, str], Decimal] = {}
        rest = ZERO
        for key in keys:
            if key == largest:
                continue
            value_cuts[key] = q(values[key] / total_value * slashed)
            rest += value_cuts[key]
        value_cuts[largest] = slashed - rest
        for r in mine:
            cut_value = value_cuts[r.key]
            p = prices[r.asset.symbol]
            tokens = q(cut_value / p)
            if tokens > r.size:
                shortfall += q((tokens - r.size) * p)
                tokens = r.size
            cuts[r.key] = tokens
            updated.append(replace(r, size=r.size - tokens, loan=q(r.loan * (1 - dec(varpi)))))
    else:
        updated = [replace(r, loan=q(r.loan * (1 - dec(varpi)))) for r in mine]

    loan_after = sum((r.loan for r in updated), ZERO)
    report = SlashReport(
        validator=validator.id,
        rate=varpi,
        loan_before=loan_before,
        loan_after=loan_after,
        slashed=slashed,
        reserve_cuts=cuts,
        shortfall=shortfall,
    )
    return updated, report


def request_unstake(
    amount: Decimal,
    epoch: int,
    params: ProtocolParams,
    available: Optional[Decimal] = None,
) -> UnstakeTicket:
    """Queue protocol-held NST for withdrawal after the unstaking period."""
    amount = dec(amount)
    if amount < 0:
        raise ValueError("amount must be >= 0")
    if available is not None and amount > available:
        raise OverWithdrawalError(f"unstake {amount} exceeds protocol-held {available}")
    return UnstakeTicket(amount=amount, request_epoch=epoch, release_epoch=epoch + params.unstake_epochs)


def accrue_staking_rewards(total_delegated: Decimal, srr) -> Decimal:
    """SR_e = srr * L_e, the epoch's deposit into the reward pool."""
    if dec(srr) < 0:
        raise ValueError("srr must be >= 0")
    return q(total_delegated * dec(srr))


@dataclass(frozen=True)
class LivenessReport:
    ejection_epochs: int
    total_epochs: int
    frequency: float
    threshold: float
    passed: bool


def liveness_probability_check(ejection_flags: Sequence[bool], params: ProtocolParams) -> LivenessReport:
    """Empirical frequency of validator-ejection epochs against lambda."""
    total = len(ejection_flags)
    hits = sum(1 for f in ejection_flags if f)
    freq = hits / total if total else 0.0
    return LivenessReport(
        ejection_epochs=hits,
        total_epochs=total,
        frequency=freq,
        threshold=params.lambda_liveness,
        passed=freq <= params.lambda_liveness,
    )
