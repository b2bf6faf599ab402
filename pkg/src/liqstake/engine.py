"""The epoch pipeline. Advancing a ledger executes, in fixed order:

1. mark-to-market, 2. collateral requote (loan deltas + global rate
multiplier + per-validator delegation caps), 3. slashing and ejections,
4. staking-reward accrual into the reward pool, 5. reward plan and
distribution, 6. target-efficiency controller update, 7. credit round
rollover when the new epoch opens a round. Matured unstake tickets are
released in a final sweep.

Requoting before distribution prevents rewarding stale collateral.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Mapping, Optional

from . import credits as creditsmod
from . import rewards as rewardsmod
from . import staking as stakingmod
from .collateral import (
    BorrowCeiling,
    CollateralQuote,
    borrow_ceiling,
    collateral_rate,
    global_multiplier,
)
from .money import TOL, ZERO, dec, q, q_down
from .rewards import ControllerState, RewardPlan
from .staking import SlashReport, UnstakeTicket, Validator
from .state import (
    EpochLedger,
    MissingPriceError,
    PriceBook,
    ProtocolError,
    ProtocolParams,
    ReserveState,
    ValuationReport,
    mark_to_market,
)


class EngineInvariantError(ProtocolError):
    pass


@dataclass(frozen=True)
class EpochEvents:
    """Exogenous per-epoch inputs: validator slashes and CDA demand."""

    slashes: tuple[str, ...] = ()
    utilised: Mapping[str, Decimal] = field(default_factory=dict)  # nominal value in use per pool


@dataclass(frozen=True)
class EpochReport:
    """Everything the pipeline computed while advancing one epoch."""

    epoch: int
    valuations: ValuationReport
    quotes: Mapping[str, CollateralQuote]
    multiplier: Decimal
    ceiling: BorrowCeiling
    loan_deltas: Mapping[tuple[str, str, str], Decimal]
    slash_reports: tuple[SlashReport, ...]
    ejections: tuple[str, ...]
    staking_reward: Decimal
    eff: float
    eff_ma_m: float
    eff_ma_n: float
    pool_eff: Mapping[str, float]
    plan: RewardPlan
    payouts: Mapping[tuple[str, str, str], Decimal]
    released: tuple[UnstakeTicket, ...]
    utilised_total: Decimal
    credit_replenishments: Optional[Mapping[str, Decimal]] = None


def collateral_targets(target_weights: Mapping[str, float], nst_symbol: str) -> dict[str, float]:
    """Renormalize the full-portfolio targets onto the LP-token basket.

    The deviation surcharge prices collateral, so both the observed
    weights and the targets must live on the collateral-only simplex.
    """
    lp = {s: w for s, w in target_weights.items() if s != nst_symbol and w > 0.0}
    total = sum(lp.values())
    if total <= 0.0:
        return {}
    return {s: w / total for s, w in lp.items()}


def tenure_factor(lock_len: int, params: ProtocolParams) -> float:
    """Within-pool payout weight for a committed lock length, in
    [lock_floor_frac, 1)."""
    return rewardsmod.tenure_incentive(
        float(lock_len), params.lock_floor_frac, 1.0, params.k, params.e_mid, params.nu
    )


def advance_epoch(
    ledger: EpochLedger,
    params: ProtocolParams,
    market: PriceBook,
    events: Optional[EpochEvents] = None,
) -> EpochLedger:
    """Advance one epoch; the input snapshot is never mutated."""
    new_ledger, _ = advance_epoch_report(ledger, params, market, events)
    return new_ledger


def advance_epoch_report(
    ledger: EpochLedger,
    params: ProtocolParams,
    market: PriceBook,
    events: Optional[EpochEvents] = None,
) -> tuple[EpochLedger, EpochReport]:
    ev = events or EpochEvents()
    t = ledger.epoch + 1
    nst = market.nst_symbol

    for r in ledger.reserves:
        if (r.size > 0 or r.loan > 0) and not market.has_price(r.asset.symbol, t):
            raise MissingPriceError(r.asset.symbol, t)
    prices = {sym: market.price(sym, t) for sym in sorted({r.asset.symbol for r in ledger.reserves})}

    # 1. mark-to-market
    valuations = mark_to_market(ledger, market, epoch=t)
    values_by_asset = valuations.by_asset()

    # 2. collateral requote
    lp_values = {s: v for s, v in values_by_asset.items() if s != nst}
    basket = sum(lp_values.values(), ZERO)
    weights = {s: float(v / basket) for s, v in lp_values.items()} if basket > 0 else {}
    targets = collateral_targets(ledger.target_weights, nst)

    quotes: dict[str, CollateralQuote] = {}
    for r in ledger.reserves:
        sym = r.asset.symbol
        if sym in quotes or sym not in targets:
            continue
        quotes[sym] = collateral_rate(r.asset, weights, targets, params)

    ceiling = borrow_ceiling(ledger.total_direct_stake, params, current_loan=ledger.total_loan())
    implied = [
        q(values_by_asset[sym] / quotes[sym].rho) for sym in sorted(quotes) if values_by_asset.get(sym, ZERO) > 0
    ]
    mult = global_multiplier(implied, ceiling.ceiling)
    quotes = {sym: replace(quotes[sym], multiplier_applied=mult) for sym in quotes}

    caps = {
        v.id: stakingmod.liveness_ceiling(v, params.min_viable_nodes, params) for v in ledger.validators
    }
    desired: dict[tuple[str, str, str], Decimal] = {}
    for r in ledger.reserves:
        quote = quotes.get(r.asset.symbol)
        if quote is None:
            desired[r.key] = ZERO
        else:
            # round toward zero: loan * rho <= S * P must survive huge rho
            desired[r.key] = q_down(r.size * prices[r.asset.symbol] / quote.effective_rho)
    for v in ledger.validators:
        keys = [r.key for r in ledger.reserves if r.validator == v.id]
        wanted = sum((desired[k] for k in keys), ZERO)
        cap = caps.get(v.id, ZERO)
        if wanted > cap:
            scale = cap / wanted if wanted > 0 else ZERO
            for k in keys:
                desired[k] = q_down(desired[k] * scale)

    extension_open = params.extension_every > 0 and t % params.extension_every == 0
    new_tickets: list[UnstakeTicket] = []
    loan_deltas: dict[tuple[str, str, str], Decimal] = {}
    reserves: list[ReserveState] = []
    for r in ledger.reserves:
        tgt = desired[r.key]
        if tgt < r.loan:
            curtail = r.loan - tgt
            new_tickets.append(stakingmod.request_unstake(curtail, t, params, available=curtail))
            loan_deltas[r.key] = -curtail
            reserves.append(replace(r, loan=tgt))
        elif tgt > r.loan and extension_open:
            loan_deltas[r.key] = tgt - r.loan
            reserves.append(replace(r, loan=tgt))
        else:
            loan_deltas[r.key] = ZERO
            reserves.append(r)

    for r in reserves:
        quote = quotes.get(r.asset.symbol)
        if quote is not None and quote.effective_rho.is_finite():
            if r.loan * quote.effective_rho > q(r.size * prices[r.asset.symbol]) + TOL:
                raise EngineInvariantError(f"reserve {r.key}: loan exceeds collateral at quoted rate")

    # 3. slashing, then ejection sweep
    slash_reports: list[SlashReport] = []
    val_map = {v.id: v for v in ledger.validators}
    for vid in sorted(set(ev.slashes)):
        v = val_map.get(vid)
        if v is None or not v.active:
            continue
        mine, report = stakingmod.slash(v, reserves, prices, params.varpi)
        merged = {r.key: r for r in reserves}
        for r in mine:
            merged[r.key] = r
        reserves = [merged[r.key] for r in reserves]
        slash_reports.append(report)

    ejections: list[str] = []
    validators: list[Validator] = []
    for v in ledger.validators:
        delegated = sum((r.loan for r in reserves if r.validator == v.id), ZERO)
        if v.active and v.direct_stake + delegated < v.min_stake_req:
            ejections.append(v.id)
            validators.append(replace(v, active=False))
            for i, r in enumerate(reserves):
                if r.validator == v.id and r.loan > 0:
                    new_tickets.append(stakingmod.request_unstake(r.loan, t, params, available=r.loan))
                    reserves[i] = replace(r, loan=ZERO)
        else:
            validators.append(v)

    # 4. staking-reward accrual
    total_loan = sum((r.loan for r in reserves), ZERO)
    in_window = params.accrual_epochs is None or t <= params.accrual_epochs
    sr = stakingmod.accrue_staking_rewards(total_loan, params.srr) if in_window else ZERO
    pool = ledger.reward_pool + sr

    # 5. reward plan and distribution
    sizes = {}
    for r in reserves:
        sizes[r.asset.symbol] = sizes.get(r.asset.symbol, ZERO) + r.size
    deposited = {sym: q(sizes[sym] * prices[sym]) for sym in sorted(sizes)}
    utilised: dict[str, Decimal] = {}
    for sym in sorted(deposited):
        u = dec(ev.utilised.get(sym, ZERO))
        utilised[sym] = min(max(u, ZERO), deposited[sym])
    utilised_total = sum(utilised.values(), ZERO)
    deposited_total = sum(deposited.values(), ZERO)

    eff = (
        rewardsmod.capital_efficiency(deposited_total - utilised_total, deposited_total)
        if deposited_total > 0
        else 0.0
    )
    pool_eff_now: dict[str, float] = {}
    tracked = sorted(set(ledger.pool_eff) | set(deposited))
    for sym in tracked:
        if deposited.get(sym, ZERO) > 0:
            pool_eff_now[sym] = rewardsmod.capital_efficiency(deposited[sym] - utilised[sym], deposited[sym])
        else:
            pool_eff_now[sym] = 0.0
    eff_series = ledger.eff_series + (eff,)
    pool_eff = {sym: ledger.pool_eff.get(sym, ()) + (pool_eff_now[sym],) for sym in tracked}

    stats = rewardsmod.moving_average_and_derivatives(eff_series, params.m_win, params.n_win)
    budget = rewardsmod.epoch_reward_budget(
        total_loan, params.srr, stats.ma_m, ledger.controller.target, pool, params
    )

    loans = {}
    for r in reserves:
        if r.loan > 0:
            loans[r.asset.symbol] = loans.get(r.asset.symbol, ZERO) + r.loan
    live_pools = [sym for sym in sorted(deposited) if deposited[sym] > 0]
    plan = RewardPlan(budget=budget, pools=())
    if loans and live_pools:
        pool_ma = {sym: rewardsmod.seeded_ma(pool_eff[sym], params.m_win) for sym in live_pools}
        eff_max = max(pool_ma.values())
        eff_min = min(pool_ma.values())
        pool_weights = {
            sym: rewardsmod.pool_weight(pool_ma[sym], eff_max, eff_min, params) for sym in loans
        }
        plan = rewardsmod.allocate_rewards(loans, pool_weights, budget)
    distributed = plan.distributed
    if distributed > pool + TOL:
        raise EngineInvariantError("distribution exceeds the reward pool")
    pool -= distributed
    if pool < 0:
        raise EngineInvariantError("reward pool went negative")

    payouts: dict[tuple[str, str, str], Decimal] = {}
    for pr in plan.pools:
        holders = {
            r.key: r.loan * dec(tenure_factor(r.lock_len, params))
            for r in reserves
            if r.asset.symbol == pr.symbol and r.loan > 0
        }
        if sum(holders.values(), ZERO) <= 0:  # all tenure factors underflowed
            holders = {r.key: r.loan for r in reserves if r.asset.symbol == pr.symbol and r.loan > 0}
        payouts.update(rewardsmod.exact_shares(pr.distributable, holders))

    # 6. controller update
    controller = rewardsmod.controller_update(ledger.controller, stats, params)

    # 7. credit round rollover; ownership shares come from the reserves
    credit = ledger.credit
    replenishments = None
    if params.round_len > 0 and t % params.round_len == 0:
        shares: dict[str, dict[str, float]] = {}
        for r in reserves:
            if r.owner and r.size > 0:
                mine = shares.setdefault(r.owner, {})
                sym = r.asset.symbol
                mine[sym] = mine.get(sym, 0.0) + float(r.size / sizes[sym])
        credit = replace(credit, shares=shares)
        delta_b = q(params.credit_b0 * dec(params.credit_decay) ** credit.round_index)
        gammas = {sym: params.gamma_for(sym) for sym in sizes}
        credit, replenishments = creditsmod.open_round(credit, sizes, prices, gammas, delta_b)

    queue = list(ledger.unstake_queue) + new_tickets
    released = tuple(tk for tk in queue if tk.release_epoch <= t)
    remaining = tuple(tk for tk in queue if tk.release_epoch > t)

    new_ledger = EpochLedger(
        epoch=t,
        reserves=tuple(reserves),
        validators=tuple(validators),
        reward_pool=pool,
        staking_rewards=sr,
        eff_series=eff_series,
        pool_eff=pool_eff,
        controller=controller,
        target_weights=ledger.target_weights,
        credit=credit,
        total_direct_stake=ledger.total_direct_stake,
        unstake_queue=remaining,
    )
    report = EpochReport(
        epoch=t,
        valuations=valuations,
        quotes=quotes,
        multiplier=mult,
        ceiling=ceiling,
        loan_deltas=loan_deltas,
        slash_reports=tuple(slash_reports),
        ejections=tuple(ejections),
        staking_reward=sr,
        eff=eff,
        eff_ma_m=stats.ma_m,
        eff_ma_n=stats.ma_n,
        pool_eff=pool_eff_now,
        plan=plan,
        payouts=payouts,
        released=released,
        utilised_total=utilised_total,
        credit_replenishments=replenishments,
    )
    return new_ledger, report


def genesis_ledger(
    validators: tuple[Validator, ...],
    target_weights: Mapping[str, float],
    params: ProtocolParams,
    pool_symbols: tuple[str, ...] = (),
    total_direct_stake: Optional[Decimal] = None,
    credit: Optional[creditsmod.CreditBook] = None,
) -> EpochLedger:
    """Epoch-0 snapshot: empty reserves, zero reward pool, round 1 opened
    with the first credit-budget instalment."""
    stake = total_direct_stake if total_direct_stake is not None else sum((v.direct_stake for v in validators), ZERO)
    book = credit
    if book is None:
        book = creditsmod.CreditBook()
        book, _ = creditsmod.open_round(book, {}, {}, {}, q(params.credit_b0))
    return EpochLedger(
        epoch=0,
        reserves=(),
        validators=validators,
        reward_pool=ZERO,
        staking_rewards=ZERO,
        eff_series=(0.0,),
        pool_eff={sym: (0.0,) for sym in pool_symbols},
        controller=ControllerState(target=params.target_eff0),
        target_weights=dict(target_weights),
        credit=book,
        total_direct_stake=stake,
        unstake_queue=(),
    )
