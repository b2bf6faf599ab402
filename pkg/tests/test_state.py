from __future__ import annotations

from decimal import Decimal

import pytest

from liqstake.credits import CreditBook
from liqstake.engine import EpochEvents, advance_epoch, advance_epoch_report, genesis_ledger
from liqstake.money import ZERO, dec, q
from liqstake.rewards import ControllerState
from liqstake.staking import Validator
from liqstake.state import (
    AssetId,
    EpochLedger,
    MissingPriceError,
    PriceBook,
    ProtocolParams,
    ReserveState,
    mark_to_market,
)

ALPHA = AssetId("ALPHA")


def flat_book(symbol="ALPHA", prices=("1", "1", "1", "1", "1")):
    return PriceBook(prices={symbol: tuple(dec(p) for p in prices)})


def base_params(**kw):
    defaults = dict(
        rho_min=Decimal("1.25"),
        eta=1.0,
        chi=1.0,
        b=1.0,
        zeta=0.2,
        theta=1.0,
        c=1,
        m_win=2,
        n_win=4,
        srr=Decimal("0.1"),
        r_min=ZERO,
        w_nst_target=0.75,
        varpi=0.0,
        round_len=5,
        unstake_epochs=2,
        target_eff0=0.5,
        credit_b0=Decimal("100"),
        credit_decay=1.0,
    )
    defaults.update(kw)
    return ProtocolParams(**defaults)


def ledger_with_reserve(params, loan="80", size="100"):
    led = genesis_ledger(
        validators=(Validator(id="v1", direct_stake=dec(100000)),),
        target_weights={"NST": 0.75, "ALPHA": 0.25},
        params=params,
        pool_symbols=("ALPHA",),
    )
    reserve = ReserveState(asset=ALPHA, validator="v1", size=dec(size), loan=dec(loan), lock_len=10, owner="lp")
    return led.replace(reserves=(reserve,))


class TestParams:
    def test_defaults_valid(self):
        assert ProtocolParams().violations() == []

    def test_even_c_rejected(self):
        bad = ProtocolParams(c=2).violations()
        assert any(f == "params.c" for f, _ in bad)

    def test_window_order(self):
        bad = ProtocolParams(m_win=5, n_win=5).violations()
        assert any(f == "params.n_win" for f, _ in bad)

    def test_chi_below_b(self):
        bad = ProtocolParams(chi=0.5, b=1.0).violations()
        assert any(f == "params.chi" for f, _ in bad)


class TestMarkToMarket:
    def test_simple_value(self):
        params = base_params()
        led = ledger_with_reserve(params, loan="0", size="100")
        rep = mark_to_market(led, flat_book(), epoch=0)
        assert rep.entries[0].value == dec(100)
        assert not rep.entries[0].under_collateralised

    def test_halved_price_not_flagged_with_margin(self):
        led = ledger_with_reserve(base_params(), loan="80", size="200")
        book = flat_book(prices=("0.5",))
        rep = mark_to_market(led, book, epoch=0)
        assert rep.entries[0].value == dec(100)
        assert not rep.entries[0].under_collateralised

    def test_under_collateralised_flagged(self):
        led = ledger_with_reserve(base_params(), loan="80", size="100")
        book = flat_book(prices=("0.5",))
        rep = mark_to_market(led, book, epoch=0)
        assert rep.entries[0].value == dec(50)
        assert rep.entries[0].under_collateralised

    def test_pure(self):
        led = ledger_with_reserve(base_params())
        before = led.reserves
        mark_to_market(led, flat_book(), epoch=0)
        assert led.reserves == before


class TestAdvanceEpoch:
    def test_empty_ledger_increments(self):
        params = base_params()
        led = genesis_ledger((), {"NST": 1.0}, params)
        nxt = advance_epoch(led, params, flat_book())
        assert nxt.epoch == 1
        assert nxt.reward_pool == 0
        assert nxt.total_loan() == 0

    def test_hand_traced_steady_state(self):
        # one reserve at equilibrium, flat prices, no demand:
        # rho = 1.25 (zero deviation), loan 80 unchanged, SR = 0.1*80 = 8,
        # budget factor = max(0.2, 1 - (0.5 - 0)) = 0.5 -> R = 4,
        # single pool receives DR = 4, so RP = 0 + 8 - 4 = 4.
        params = base_params()
        led = ledger_with_reserve(params)
        nxt, rep = advance_epoch_report(led, params, flat_book(), EpochEvents())
        assert nxt.epoch == 1
        assert nxt.total_loan() == dec(80)
        assert rep.staking_reward == dec(8)
        assert rep.plan.distributed == dec(4)
        assert nxt.reward_pool == dec(4)
        assert rep.quotes["ALPHA"].rho == dec("1.25")
        assert float(rep.multiplier) == 1.0
        # RP' = RP + SR - R exactly
        assert nxt.reward_pool == led.reward_pool + rep.staking_reward - rep.plan.distributed

    def test_price_halves_curtails_loan(self):
        # dL = S/rho * P - L = 100/1.25*0.5 - 80 = -40
        params = base_params()
        led = ledger_with_reserve(params)
        book = flat_book(prices=("1", "0.5"))
        nxt, rep = advance_epoch_report(led, params, book, EpochEvents())
        assert rep.loan_deltas[("ALPHA", "v1", "lp")] == dec(-40)
        assert nxt.total_loan() == dec(40)
        # the curtailed amount waits out the unstaking period
        assert len(nxt.unstake_queue) == 1
        assert nxt.unstake_queue[0].amount == dec(40)
        assert nxt.unstake_queue[0].release_epoch == 1 + params.unstake_epochs

    def test_extension_window_gates_positive_deltas(self):
        params = base_params(extension_every=0)  # extensions never open
        led = ledger_with_reserve(params, loan="0")
        nxt = advance_epoch(led, params, flat_book())
        assert nxt.total_loan() == 0
        params2 = base_params(extension_every=1)
        led2 = ledger_with_reserve(params2, loan="0")
        nxt2 = advance_epoch(led2, params2, flat_book())
        assert nxt2.total_loan() == dec(80)

    def test_missing_price_names_asset(self):
        params = base_params()
        led = ledger_with_reserve(params)
        book = PriceBook(prices={"ALPHA": (dec(1),)})  # nothing for epoch 1
        with pytest.raises(MissingPriceError, match="ALPHA"):
            advance_epoch(led, params, book)

    def test_input_snapshot_unchanged(self):
        params = base_params()
        led = ledger_with_reserve(params)
        snapshot = (led.epoch, led.reserves, led.reward_pool, led.eff_series, led.controller)
        advance_epoch(led, params, flat_book(), EpochEvents(utilised={"ALPHA": dec(60)}))
        assert (led.epoch, led.reserves, led.reward_pool, led.eff_series, led.controller) == snapshot

    def test_deterministic_replay(self):
        params = base_params()
        led = ledger_with_reserve(params)
        ev = EpochEvents(utilised={"ALPHA": dec(60)})
        a = advance_epoch(led, params, flat_book(), ev)
        b = advance_epoch(led, params, flat_book(), ev)
        assert a == b

    def test_demand_raises_efficiency_and_budget(self):
        params = base_params()
        led = ledger_with_reserve(params)
        _, quiet = advance_epoch_report(led, params, flat_book(), EpochEvents())
        _, busy = advance_epoch_report(led, params, flat_book(), EpochEvents(utilised={"ALPHA": dec(90)}))
        assert busy.eff == pytest.approx(0.9)
        assert busy.plan.distributed > quiet.plan.distributed

    def test_reward_pool_never_distributes_more_than_pool(self):
        params = base_params(zeta=1.0, theta=0.0)
        led = ledger_with_reserve(params)
        nxt, rep = advance_epoch_report(led, params, flat_book(), EpochEvents())
        # formula would pay srr*L = 8; pool holds exactly SR = 8
        assert rep.plan.distributed <= led.reward_pool + rep.staking_reward
        assert nxt.reward_pool >= 0

    def test_slash_event_flows_through(self):
        params = base_params(varpi=0.1)
        led = ledger_with_reserve(params)
        nxt, rep = advance_epoch_report(led, params, flat_book(), EpochEvents(slashes=("v1",)))
        assert len(rep.slash_reports) == 1
        assert rep.slash_reports[0].loan_after == q(dec(80) * dec("0.9"))

    def test_accrual_window_closes_but_pool_keeps_paying(self):
        params = base_params(accrual_epochs=1)
        led = ledger_with_reserve(params)
        one, rep1 = advance_epoch_report(led, params, flat_book(), EpochEvents())
        assert rep1.staking_reward == dec(8)
        two, rep2 = advance_epoch_report(one, params, flat_book(), EpochEvents())
        assert rep2.staking_reward == 0  # window closed
        assert rep2.plan.distributed > 0  # rewards keep flowing while RP >= 0
        assert two.reward_pool >= 0

    def test_longer_locks_earn_a_larger_payout_share(self):
        params = base_params()
        led = genesis_ledger(
            validators=(Validator(id="v1", direct_stake=dec(100000)),),
            target_weights={"NST": 0.75, "ALPHA": 0.25},
            params=params,
            pool_symbols=("ALPHA",),
        )
        short = ReserveState(asset=ALPHA, validator="v1", size=dec(100), loan=dec(80), lock_len=1, owner="s")
        long = ReserveState(asset=ALPHA, validator="v1", size=dec(100), loan=dec(80), lock_len=40, owner="l")
        led = led.replace(reserves=(short, long))
        _, rep = advance_epoch_report(led, params, flat_book(), EpochEvents(utilised={"ALPHA": dec(100)}))
        paid_short = rep.payouts[short.key]
        paid_long = rep.payouts[long.key]
        assert paid_long > paid_short
        assert paid_short + paid_long == rep.plan.distributed

    def test_zero_ceiling_curtails_all_loans(self):
        # w*_NST = 1 forbids borrowing entirely: the multiplier saturates
        # and every loan is curtailed to zero
        params = base_params(w_nst_target=1.0)
        led = ledger_with_reserve(params, loan="80")
        nxt, rep = advance_epoch_report(led, params, flat_book(), EpochEvents())
        assert rep.ceiling.ceiling == 0
        assert not rep.multiplier.is_finite()
        assert nxt.total_loan() == 0
        assert len(nxt.unstake_queue) == 1 and nxt.unstake_queue[0].amount == dec(80)

    def test_credit_round_opens_on_schedule(self):
        params = base_params(round_len=2, gamma=0.01)
        led = ledger_with_reserve(params)
        one = advance_epoch(led, params, flat_book())
        assert one.credit.round_index == 1  # genesis round still running
        two = advance_epoch(one, params, flat_book())
        assert two.credit.round_index == 2
        assert two.credit.asset_caps["ALPHA"] == dec(1)  # 100 tokens * P1 * 0.01
        assert two.credit.accounts["lp"].balance == dec(1)
