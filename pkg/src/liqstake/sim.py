"""Seeded scenario simulation: price paths, LP agents, demand, the epoch
loop, and trace export. A scenario's seed fully determines the run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Mapping, Optional, Sequence

import numpy as np

from . import rewards as rewardsmod
from . import risk as riskmod
from .credits import check_balances, spend
from .engine import EpochEvents, EpochReport, advance_epoch_report, genesis_ledger
from .money import TOL, ZERO, dec, fmt, q, q_down
from .staking import Validator, liveness_probability_check
from .state import AssetId, EpochLedger, PriceBook, ProtocolParams, ReserveState, Trade


class ScenarioError(ValueError):
    pass


class EngineAbort(RuntimeError):
    def __init__(self, epoch: int, cause: Exception):
        super().__init__(f"epoch {epoch}: {cause}")
        self.epoch = epoch
        self.cause = cause


@dataclass(frozen=True)
class AssetSpec:
    symbol: str
    price0: Decimal = Decimal(1)
    vol: float = 0.0
    drift: float = 0.0
    is_nst: bool = False
    spread: float = 0.01
    volume_mean: float = 1000.0


@dataclass(frozen=True)
class AgentSpec:
    address: str
    endowment: Decimal = ZERO  # nominal NST value of LP capital
    arrival_epoch: int = 0
    lock_menu: tuple[int, ...] = (5, 20, 60)


@dataclass(frozen=True)
class ValidatorSpec:
    id: str
    direct_stake: Decimal
    min_stake: Decimal = ZERO


@dataclass(frozen=True)
class DemandSpec:
    mean: float = 0.5
    vol: float = 0.1
    series: tuple[float, ...] = ()  # explicit utilisation intensity (overrides mean/vol, no jitter)


@dataclass(frozen=True)
class MetricSpec:
    w1: float = 0.5
    w2: float = 0.5
    alpha: float = 0.95
    kappa_limit: float = 1.0
    cvar_limit: float = 1.0


@dataclass(frozen=True)
class Scenario:
    seed: int
    epochs: int
    assets: tuple[AssetSpec, ...]
    agents: tuple[AgentSpec, ...] = ()
    validators: tuple[ValidatorSpec, ...] = ()
    demand: DemandSpec = DemandSpec()
    params: ProtocolParams = ProtocolParams()
    metrics: MetricSpec = MetricSpec()
    correlation: float = 0.0
    slash_prob: float = 0.0
    credit_spend_rate: float = 0.0
    wash_rate: float = 0.0
    discount_rate: float = 0.0
    schema_version: int = 1

    def nst(self) -> AssetSpec:
        return next(a for a in self.assets if a.is_nst)

    def pool_symbols(self) -> tuple[str, ...]:
        return tuple(sorted(a.symbol for a in self.assets if not a.is_nst))

    def violations(self) -> list[tuple[str, str]]:
        out = list(self.params.violations())
        if self.seed < 0 or self.seed >= 2**64:
            out.append(("scenario.seed", "seed must fit in 64 bits"))
        if self.epochs < 0:
            out.append(("scenario.epochs", "epochs must be >= 0"))
        nst_count = sum(1 for a in self.assets if a.is_nst)
        if nst_count != 1:
            out.append(("assets", f"exactly one asset must have is_nst = true (found {nst_count})"))
        seen: set[str] = set()
        for i, a in enumerate(self.assets):
            if a.symbol in seen:
                out.append((f"assets[{i}].symbol", f"duplicate symbol {a.symbol!r}"))
            seen.add(a.symbol)
            if a.price0 <= 0:
                out.append((f"assets[{i}].price0", "price0 must be > 0"))
            if a.vol < 0:
                out.append((f"assets[{i}].vol", "vol must be >= 0"))
        for i, ag in enumerate(self.agents):
            if ag.endowment < 0:
                out.append((f"agents[{i}].endowment", "endowment must be >= 0"))
            if ag.arrival_epoch < 0:
                out.append((f"agents[{i}].arrival_epoch", "arrival_epoch must be >= 0"))
            if not ag.lock_menu:
                out.append((f"agents[{i}].lock_menu", "lock_menu must not be empty"))
        for i, v in enumerate(self.validators):
            if v.direct_stake < 0:
                out.append((f"validators[{i}].direct_stake", "direct_stake must be >= 0"))
        if self.agents and not self.validators:
            out.append(("validators", "agents need at least one validator to delegate to"))
        if abs(self.metrics.w1 + self.metrics.w2 - 1.0) > 1e-9:
            out.append(("metrics.w1", "w1 + w2 must equal 1"))
        if not (0.0 <= self.slash_prob <= 1.0):
            out.append(("scenario.slash_prob", "slash_prob must be in [0, 1]"))
        if not (0.0 <= self.credit_spend_rate <= 1.0):
            out.append(("scenario.credit_spend_rate", "credit_spend_rate must be in [0, 1]"))
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            msgs = "; ".join(f"{f}: {m}" for f, m in bad)
            raise ScenarioError(f"invalid scenario: {msgs}")


def _rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(6)
    names = ("prices", "tape", "demand", "agents", "slashes", "credits")
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def gen_prices(scenario: Scenario) -> PriceBook:
    """Geometric Brownian price path per asset; the NST is the numeraire
    and prices at 1. The tape carries one seeded trade per asset-epoch
    plus optional injected wash pairs."""
    rngs = _rngs(scenario.seed)
    rng = rngs["prices"]
    tape_rng = rngs["tape"]
    n = scenario.epochs
    prices: dict[str, tuple[Decimal, ...]] = {}
    tape: dict[str, tuple[Trade, ...]] = {}
    spreads: dict[str, float] = {}
    for spec in sorted(scenario.assets, key=lambda a: a.symbol):
        if spec.is_nst:
            continue
        if spec.vol < 0:
            raise ScenarioError(f"asset {spec.symbol!r}: negative volatility")
        z = rng.standard_normal(n)
        series = [q(spec.price0)]
        level = float(spec.price0)
        for i in range(n):
            level *= float(np.exp((spec.drift - 0.5 * spec.vol**2) + spec.vol * z[i]))
            series.append(q(dec(level)))
        prices[spec.symbol] = tuple(series)
        trades: list[Trade] = []
        for e in range(n + 1):
            vol = q(dec(spec.volume_mean * float(tape_rng.lognormal(0.0, 0.5))))
            sign = 1 if tape_rng.random() < 0.5 else -1
            trades.append(Trade(timestep=e, volume=sign * vol, price=series[e]))
            if scenario.wash_rate > 0 and tape_rng.random() < scenario.wash_rate:
                amt = q(dec(spec.volume_mean * 0.5))
                trades.append(Trade(timestep=e, volume=amt, price=series[e]))
                trades.append(Trade(timestep=e, volume=-amt, price=series[e]))
        tape[spec.symbol] = tuple(trades)
        spreads[spec.symbol] = spec.spread
    nst = scenario.nst()
    return PriceBook(prices=prices, tape=tape, spreads=spreads, nst_symbol=nst.symbol)


def genesis_target_weights(scenario: Scenario) -> dict[str, float]:
    """Target basket from the configured vols and common correlation."""
    specs = sorted(scenario.assets, key=lambda a: a.symbol)
    assets = [AssetId(s.symbol, s.is_nst) for s in specs]
    vols = [s.vol for s in specs]
    k = len(assets)
    corr = np.full((k, k), scenario.correlation)
    np.fill_diagonal(corr, 1.0)
    tw = riskmod.target_weights(assets, vols, corr, scenario.params)
    return dict(tw.weights)


def best_lock(menu: Sequence[int], params: ProtocolParams, discount_rate: float) -> int:
    """Lock length maximising the present value of the forward tenure
    incentives over the committed horizon."""
    curve = lambda t: rewardsmod.tenure_incentive(t, params.lock_floor_frac, 1.0, params.k, params.e_mid, params.nu)
    rate = lambda _t: discount_rate
    scored = [(rewardsmod.present_value(curve, rate, float(lock)), lock) for lock in sorted(menu)]
    return max(scored, key=lambda sl: (sl[0], sl[1]))[1]


def current_pool_weights(ledger: EpochLedger, params: ProtocolParams, symbols: Sequence[str]) -> dict[str, float]:
    """The lending-fee weights a depositor sees right now."""
    mas = {sym: rewardsmod.seeded_ma(ledger.pool_eff.get(sym, (0.0,)), params.m_win) for sym in symbols}
    eff_max, eff_min = max(mas.values()), min(mas.values())
    return {sym: rewardsmod.pool_weight(mas[sym], eff_max, eff_min, params) for sym in symbols}


@dataclass(frozen=True)
class AgentAction:
    address: str
    lock_len: int
    deposits: Mapping[str, Decimal]  # symbol -> token amount


def agent_step(agent: AgentSpec, ledger: EpochLedger, params: ProtocolParams, market: PriceBook,
               discount_rate: float = 0.0) -> Optional[AgentAction]:
    """Rational deposit: pick the PV-maximising lock from the menu and
    split the endowment across pools proportional to current weights."""
    if agent.endowment <= 0:
        return None
    symbols = sorted(market.prices)
    if not symbols:
        return None
    lock = best_lock(agent.lock_menu, params, discount_rate)
    weights = current_pool_weights(ledger, params, symbols)
    total_w = sum(weights.values())
    deposits: dict[str, Decimal] = {}
    for sym in symbols:
        value = q(agent.endowment * dec(weights[sym] / total_w))
        price = market.price(sym, ledger.epoch)
        tokens = q(value / price)
        if tokens > 0:
            deposits[sym] = tokens
    if not deposits:
        return None
    return AgentAction(address=agent.address, lock_len=lock, deposits=deposits)


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    reward_pool: Decimal
    staking_rewards: Decimal
    reward_budget: Decimal
    reward_distributed: Decimal
    eff: float
    eff_ma_m: float
    eff_ma_n: float
    eff_target: float
    w_nst: Optional[float]
    multiplier: float
    credit_budget: Decimal
    sizes: Mapping[str, Decimal]
    loans: Mapping[str, Decimal]
    rhos: Mapping[str, float]
    pool_eff: Mapping[str, float]
    pool_weights: Mapping[str, float]
    pool_dr: Mapping[str, Decimal]
    pool_interest: Mapping[str, float]
    values_by_asset: Mapping[str, Decimal]
    utilised_total: Decimal
    interest_total: Decimal
    slashes: int
    ejections: int
    wash_flags: int


@dataclass
class Trace:
    scenario: Scenario
    market: PriceBook
    rows: list[TraceRow] = field(default_factory=list)
    ledgers: list[EpochLedger] = field(default_factory=list)  # one snapshot per epoch, genesis included

    @property
    def final_ledger(self) -> Optional[EpochLedger]:
        return self.ledgers[-1] if self.ledgers else None

    @property
    def pool_symbols(self) -> tuple[str, ...]:
        return self.scenario.pool_symbols()

    def export_csv(self) -> str:
        syms = self.pool_symbols
        cols = ["epoch", "E", "eff_ma_m", "eff_ma_n", "eff_target", "R", "RP", "SR",
                "w_nst", "m", "credit_budget"]
        for sym in syms:
            cols += [f"S_{sym}", f"L_{sym}", f"rho_{sym}", f"E_{sym}", f"W_{sym}", f"DR_{sym}", f"I_{sym}"]
        lines = [",".join(cols)]
        for row in self.rows:
            vals = [
                str(row.epoch),
                repr(row.eff),
                repr(row.eff_ma_m),
                repr(row.eff_ma_n),
                repr(row.eff_target),
                fmt(row.reward_distributed),
                fmt(row.reward_pool),
                fmt(row.staking_rewards),
                "" if row.w_nst is None else repr(row.w_nst),
                repr(row.multiplier),
                fmt(row.credit_budget),
            ]
            for sym in syms:
                vals += [
                    fmt(row.sizes.get(sym, ZERO)),
                    fmt(row.loans.get(sym, ZERO)),
                    repr(row.rhos.get(sym, 0.0)),
                    repr(row.pool_eff.get(sym, 0.0)),
                    repr(row.pool_weights.get(sym, 0.0)),
                    fmt(row.pool_dr.get(sym, ZERO)),
                    repr(row.pool_interest.get(sym, 0.0)),
                ]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def export_rows_json(self) -> str:
        syms = self.pool_symbols
        payload = []
        for row in self.rows:
            payload.append(
                {
                    "epoch": row.epoch,
                    "E": row.eff,
                    "eff_ma_m": row.eff_ma_m,
                    "eff_ma_n": row.eff_ma_n,
                    "eff_target": row.eff_target,
                    "R": fmt(row.reward_distributed),
                    "RP": fmt(row.reward_pool),
                    "SR": fmt(row.staking_rewards),
                    "w_nst": row.w_nst,
                    "m": row.multiplier if math.isfinite(row.multiplier) else repr(row.multiplier),
                    "credit_budget": fmt(row.credit_budget),
                    "pools": {
                        sym: {
                            "S": fmt(row.sizes.get(sym, ZERO)),
                            "L": fmt(row.loans.get(sym, ZERO)),
                            "rho": row.rhos.get(sym, 0.0),
                            "E": row.pool_eff.get(sym, 0.0),
                            "W": row.pool_weights.get(sym, 0.0),
                            "DR": fmt(row.pool_dr.get(sym, ZERO)),
                            "I": row.pool_interest.get(sym, 0.0),
                        }
                        for sym in syms
                    },
                }
            )
        return json.dumps(payload, sort_keys=True, indent=2)

    def summary(self) -> dict:
        sc = self.scenario
        report = riskmod.objective_metrics(
            self, sc.metrics.w1, sc.metrics.w2, sc.params,
            kappa_limit=sc.metrics.kappa_limit,
            cvar_limit=sc.metrics.cvar_limit,
            alpha=sc.metrics.alpha,
        )
        wash_total = 0
        for sym in self.pool_symbols:
            tape = self.market.tape.get(sym, ())
            tol = dec(self.market.spreads.get(sym, 0.0))
            wash_total += len(riskmod.detect_wash_trades(tape, tol, window=2))
        liveness = liveness_probability_check([r.ejections > 0 for r in self.rows[1:]], sc.params)
        total_sr = sum((r.staking_rewards for r in self.rows), ZERO)
        total_r = sum((r.reward_distributed for r in self.rows), ZERO)
        total_dr = sum((sum(r.pool_dr.values(), ZERO) for r in self.rows), ZERO)
        return {
            "seed": sc.seed,
            "epochs": sc.epochs,
            "objective": report.objective,
            "total_value": fmt(report.total_value),
            "total_variance": report.total_variance,
            "kappa_freq": report.kappa_freq,
            "kappa_limit": report.kappa_limit,
            "alpha": report.alpha,
            "kappa_pass": report.kappa_pass,
            "cvar": report.cvar,
            "cvar_limit": report.cvar_limit,
            "cvar_pass": report.cvar_pass,
            "incentives_total": fmt(report.incentives_total),
            "budget_total": fmt(report.budget_total),
            "budget_pass": report.budget_pass,
            "sum_sr": fmt(total_sr),
            "sum_r": fmt(total_r),
            "sum_dr": fmt(total_dr),
            "final_reward_pool": fmt(self.rows[-1].reward_pool),
            "controller_path": [r.eff_target for r in self.rows],
            "wash_flags": wash_total,
            "ejection_epochs": liveness.ejection_epochs,
            "liveness_freq": liveness.frequency,
            "liveness_lambda": liveness.threshold,
            "liveness_pass": liveness.passed,
        }

    def export_summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def _genesis_row(ledger: EpochLedger, params: ProtocolParams, symbols: Sequence[str]) -> TraceRow:
    stake = ledger.total_direct_stake
    return TraceRow(
        epoch=0,
        reward_pool=ledger.reward_pool,
        staking_rewards=ZERO,
        reward_budget=ZERO,
        reward_distributed=ZERO,
        eff=0.0,
        eff_ma_m=0.0,
        eff_ma_n=0.0,
        eff_target=ledger.controller.target,
        w_nst=None if stake == 0 else 1.0,
        multiplier=1.0,
        credit_budget=ledger.credit.budget,
        sizes={},
        loans={},
        rhos={},
        pool_eff={},
        pool_weights={},
        pool_dr={},
        pool_interest={},
        values_by_asset={},
        utilised_total=ZERO,
        interest_total=ZERO,
        slashes=0,
        ejections=0,
        wash_flags=0,
    )


def _row_from(ledger: EpochLedger, report: EpochReport) -> TraceRow:
    stake = ledger.total_direct_stake
    w_nst = None if stake == 0 else float(1 - ledger.total_loan() / stake)
    sizes = ledger.sizes_by_asset()
    prices = {v.asset: v.price for v in report.valuations.entries}
    values = {sym: q(sizes[sym] * prices[sym]) for sym in sizes if sym in prices}
    plan_by_sym = {p.symbol: p for p in report.plan.pools}
    return TraceRow(
        epoch=ledger.epoch,
        reward_pool=ledger.reward_pool,
        staking_rewards=report.staking_reward,
        reward_budget=report.plan.budget,
        reward_distributed=report.plan.distributed,
        eff=report.eff,
        eff_ma_m=report.eff_ma_m,
        eff_ma_n=report.eff_ma_n,
        eff_target=ledger.controller.target,
        w_nst=w_nst,
        multiplier=float(report.multiplier),
        credit_budget=ledger.credit.budget,
        sizes=sizes,
        loans=ledger.loans_by_asset(),
        rhos={sym: float(qd.effective_rho) for sym, qd in report.quotes.items()},
        pool_eff=dict(report.pool_eff),
        pool_weights={p.symbol: p.weight for p in report.plan.pools},
        pool_dr={p.symbol: p.distributable for p in report.plan.pools},
        pool_interest={p.symbol: p.interest for p in report.plan.pools},
        values_by_asset=values,
        utilised_total=report.utilised_total,
        interest_total=report.plan.interest_total,
        slashes=len(report.slash_reports),
        ejections=len(report.ejections),
        wash_flags=0,
    )


def _assert_epoch_invariants(ledger: EpochLedger, report: EpochReport, params: ProtocolParams) -> None:
    assert ledger.reward_pool >= 0, "reward pool negative"
    plan = report.plan
    if plan.pools:
        assert plan.distributed == plan.budget, "plan distributed != budget"
        assert sum(report.payouts.values(), ZERO) == plan.distributed, "payouts drop budget"
    assert abs(plan.interest_total) <= TOL, "interest not zero-sum"
    for r in ledger.reserves:
        assert r.size >= 0 and r.loan >= 0, "negative reserve balance"
    for quote in report.quotes.values():
        if quote.effective_rho.is_finite():
            assert quote.effective_rho >= 1, "collateralisation rate below 1"
    assert 0.0 <= report.eff <= 1.0, "CDA efficiency outside [0, 1]"
    for v in report.pool_eff.values():
        assert 0.0 <= v <= 1.0, "pool efficiency outside [0, 1]"
    assert 0.0 <= ledger.controller.target <= 1.0, "controller target outside [0, 1]"
    if report.ceiling.ceiling > 0:
        assert ledger.total_loan() <= report.ceiling.ceiling + TOL, "loans exceed borrow ceiling"
    from liqstake.staking import liveness_ceiling

    for v in ledger.validators:
        if v.active:
            delegated = sum((r.loan for r in ledger.reserves if r.validator == v.id), ZERO)
            assert delegated <= liveness_ceiling(v, params.min_viable_nodes, params) + TOL, (
                "delegation exceeds the liveness ceiling"
            )
    for tk in ledger.unstake_queue:
        assert tk.release_epoch - tk.request_epoch == params.unstake_epochs, "unstake period drifted"
    check_balances(ledger.credit)
    assert ledger.credit.budget >= 0, "credit budget negative"


def run(scenario: Scenario) -> Trace:
    """Run the scenario end to end; every epoch asserts the invariant
    suite inline. Deterministic: the same scenario yields a byte-identical
    trace export."""
    scenario.validate()
    params = scenario.params
    market = gen_prices(scenario)
    rngs = _rngs(scenario.seed)
    demand_rng = rngs["demand"]
    slash_rng = rngs["slashes"]

    validators = tuple(
        Validator(id=v.id, direct_stake=q(v.direct_stake), min_stake_req=q(v.min_stake))
        for v in scenario.validators
    )
    targets = genesis_target_weights(scenario)
    ledger = genesis_ledger(validators, targets, params, pool_symbols=scenario.pool_symbols())
    trace = Trace(scenario=scenario, market=market)
    trace.rows.append(_genesis_row(ledger, params, scenario.pool_symbols()))
    trace.ledgers.append(ledger)

    active_ids = [v.id for v in validators]
    assignments = {a.address: active_ids[i % len(active_ids)] if active_ids else "" for i, a in enumerate(scenario.agents)}

    for e in range(scenario.epochs):
        t = e + 1
        # agent arrivals deposit into reserves before the epoch turns
        new_reserves: list[ReserveState] = []
        for agent in scenario.agents:
            if agent.arrival_epoch != e:
                continue
            action = agent_step(agent, ledger, params, market, scenario.discount_rate)
            if action is None:
                continue
            vid = assignments[agent.address]
            for sym in sorted(action.deposits):
                new_reserves.append(
                    ReserveState(
                        asset=AssetId(sym),
                        validator=vid,
                        size=action.deposits[sym],
                        loan=ZERO,
                        lock_start=e,
                        lock_len=action.lock_len,
                        owner=agent.address,
                    )
                )
        if new_reserves:
            ledger = ledger.replace(reserves=ledger.reserves + tuple(new_reserves))

        # credit spending inside the round
        if scenario.credit_spend_rate > 0:
            book = ledger.credit
            for addr in sorted(book.accounts):
                bal = book.accounts[addr].balance
                if bal > 0:
                    amt = q_down(bal * dec(scenario.credit_spend_rate))
                    if amt > 0:
                        book = spend(book, addr, "svc", amt)
            ledger = ledger.replace(credit=book)

        # exogenous events
        slashes = tuple(
            v.id for v in sorted(ledger.validators, key=lambda v: v.id)
            if v.active and scenario.slash_prob > 0 and slash_rng.random() < scenario.slash_prob
        )
        if scenario.demand.series:
            base = scenario.demand.series[e] if e < len(scenario.demand.series) else scenario.demand.series[-1]
            intensity = {sym: base for sym in scenario.pool_symbols()}
        else:
            level = float(demand_rng.normal(scenario.demand.mean, scenario.demand.vol))
            intensity = {
                sym: float(np.clip(level + demand_rng.normal(0.0, scenario.demand.vol / 2 + 1e-9), 0.0, 1.0))
                for sym in scenario.pool_symbols()
            }
        sizes = ledger.sizes_by_asset()
        utilised = {}
        for sym in sorted(sizes):
            if sizes[sym] > 0 and market.has_price(sym, t):
                utilised[sym] = q(sizes[sym] * market.price(sym, t) * dec(intensity.get(sym, 0.0)))

        try:
            ledger, report = advance_epoch_report(ledger, params, market, EpochEvents(slashes=slashes, utilised=utilised))
            _assert_epoch_invariants(ledger, report, params)
        except Exception as exc:
            raise EngineAbort(t, exc) from exc
        trace.rows.append(_row_from(ledger, report))
        trace.ledgers.append(ledger)

    return trace
