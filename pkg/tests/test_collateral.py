from __future__ import annotations

import math
from decimal import Decimal

import numpy as np
import pytest

from liqstake.collateral import (
    AssetNotAdmissibleError,
    QualificationRule,
    borrow_ceiling,
    collateral_rate,
    delta_rho,
    global_multiplier,
    loan_requote,
    qualify_asset,
    stake_ratio_check,
)
from liqstake.money import ONE, ZERO, dec, q
from liqstake.state import AssetId, PriceBook, ProtocolParams, ReserveState, Trade

ALPHA = AssetId("ALPHA")


def mk_params(**kw):
    return ProtocolParams(**kw)


class TestCollateralRate:
    def test_zero_deviation_gives_rho_min(self):
        p = mk_params(eta=1.0, chi=1.0, b=1.0)
        quote = collateral_rate(ALPHA, {"ALPHA": 0.4}, {"ALPHA": 0.4}, p)
        assert quote.delta_rho == 0
        assert quote.rho == p.rho_min

    def test_positive_deviation_formula(self):
        # dev = (0.5 - 0.4)/0.4 = 0.25 -> e^{(chi+b)*0.25} - 1 = e^0.5 - 1
        p = mk_params(eta=1.0, chi=1.0, b=1.0)
        quote = collateral_rate(ALPHA, {"ALPHA": 0.5}, {"ALPHA": 0.4}, p)
        assert float(quote.delta_rho) == pytest.approx(0.6487212707001282, abs=1e-12)
        assert quote.rho == p.rho_min + quote.delta_rho

    def test_negative_deviation_cancels_when_chi_equals_b(self):
        p = mk_params(eta=1.0, chi=1.0, b=1.0)
        quote = collateral_rate(ALPHA, {"ALPHA": 0.3}, {"ALPHA": 0.4}, p)
        assert quote.delta_rho == 0

    def test_zero_target_not_admissible(self):
        with pytest.raises(AssetNotAdmissibleError):
            collateral_rate(ALPHA, {"ALPHA": 0.5}, {"ALPHA": 0.0}, mk_params())

    def test_surcharge_monotone_in_positive_deviation(self):
        p = mk_params(eta=1.3, chi=1.2, b=0.7)
        devs = np.linspace(0.0, 3.0, 40)
        vals = [delta_rho(d, p) for d in devs]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))

    def test_surcharge_zero_for_all_negative_dev_when_chi_equals_b(self):
        p = mk_params(eta=1.0, chi=0.8, b=0.8)
        for d in np.linspace(-5.0, 0.0, 25):
            assert delta_rho(float(d), p) == pytest.approx(0.0, abs=1e-15)

    def test_rho_never_below_one(self):
        p = mk_params(eta=2.0, chi=1.5, b=0.5, rho_min=Decimal("1"))
        for w in np.linspace(0.01, 0.99, 23):
            quote = collateral_rate(ALPHA, {"ALPHA": float(w)}, {"ALPHA": 0.4}, p)
            assert quote.rho >= 1


class TestLoanRequote:
    def reserve(self, size="100", loan="80"):
        return ReserveState(asset=ALPHA, validator="v1", size=dec(size), loan=dec(loan))

    def quote(self, rho="1.25"):
        from liqstake.collateral import CollateralQuote

        return CollateralQuote(asset=ALPHA, rho=dec(rho), delta_rho=ZERO)

    def test_equilibrium(self):
        assert loan_requote(self.reserve(loan="80"), self.quote(), ONE) == 0

    def test_curtail(self):
        assert loan_requote(self.reserve(loan="90"), self.quote(), ONE) == dec("-10")

    def test_extend_on_price_rise(self):
        assert loan_requote(self.reserve(loan="80"), self.quote(), dec("1.5")) == dec("40")


class TestBorrowCeiling:
    def test_ceiling_value(self):
        rep = borrow_ceiling(dec(10000), mk_params(w_nst_target=0.75))
        assert rep.ceiling == dec(2500)

    def test_w_nst_report(self):
        rep = borrow_ceiling(dec(10000), mk_params(w_nst_target=0.75), current_loan=dec(2000))
        assert rep.w_nst == pytest.approx(0.8)
        assert rep.satisfied(mk_params(w_nst_target=0.75))

    def test_full_nst_target_blocks_borrowing(self):
        rep = borrow_ceiling(dec(10000), mk_params(w_nst_target=1.0))
        assert rep.ceiling == 0

    def test_zero_stake(self):
        rep = borrow_ceiling(ZERO, mk_params())
        assert rep.ceiling == 0 and rep.w_nst is None


class TestGlobalMultiplier:
    def test_binding(self):
        m = global_multiplier([dec(80), dec(50)], dec(100))
        assert m == dec("1.3")
        rescaled = sum(x / m for x in [dec(80), dec(50)])
        assert abs(rescaled - 100) < dec("1e-12")

    def test_slack(self):
        assert global_multiplier([dec(30), dec(50)], dec(100)) == 1

    def test_zero_ceiling_curtails_everything(self):
        m = global_multiplier([dec(80)], ZERO)
        assert not m.is_finite()
        assert q(dec(80) / m) == 0

    def test_three_asset_closed_form(self):
        # S*P/rho = {80, 50, 70}, T = 100 -> m = 2, matching the product/sum form
        S = [dec(100), dec(100), dec(140)]
        P = [dec(2), dec("1.5"), dec(1)]
        rho = [dec("2.5"), dec(3), dec(2)]
        T = dec(100)
        m = global_multiplier([q(S[i] * P[i] / rho[i]) for i in range(3)], T)
        num = sum(S[h] * P[h] * math.prod(rho[j] for j in range(3) if j != h) for h in range(3))
        closed = num / (math.prod(rho) * T)
        assert abs(m - closed) < dec("1e-9")
        assert float(m) == pytest.approx(2.0, abs=1e-12)

    def test_closed_form_equivalence_battery(self):
        rng = np.random.default_rng(123)
        for _ in range(300):
            S = [dec(repr(float(rng.uniform(1, 500)))) for _ in range(3)]
            P = [dec(repr(float(rng.uniform(0.1, 5.0)))) for _ in range(3)]
            rho = [dec(repr(float(rng.uniform(1.0, 4.0)))) for _ in range(3)]
            T = dec(repr(float(rng.uniform(1, 200))))
            implied = [q(S[i] * P[i] / rho[i]) for i in range(3)]
            m = global_multiplier(implied, T)
            if m == 1:
                assert sum(implied) <= T
                continue
            num = sum(S[h] * P[h] * math.prod(rho[j] for j in range(3) if j != h) for h in range(3))
            closed = num / (math.prod(rho) * T)
            assert abs(m - closed) < dec("1e-9")
            total = sum(q(implied[i] / m) for i in range(3))
            assert total <= T + dec("1e-12")


class TestQualification:
    def book(self, prices, volumes=(), spread=0.01):
        tape = tuple(Trade(timestep=i, volume=dec(v), price=dec(1)) for i, v in enumerate(volumes))
        return PriceBook(prices={"ALPHA": tuple(dec(p) for p in prices)}, tape={"ALPHA": tape})

    def test_all_rules_pass(self):
        book = self.book(["1", "1.01", "1.0", "0.99", "1.0"], volumes=["100", "-50"])
        res = qualify_asset(ALPHA, book, QualificationRule(min_liquidity=dec(10), max_volatility=0.5, lookback=4))
        assert res.admissible

    def test_volatility_cap_rejects(self):
        book = self.book(["1", "3", "0.5", "2.5", "0.9"], volumes=["100"])
        res = qualify_asset(ALPHA, book, QualificationRule(max_volatility=0.1, lookback=4))
        assert not res.admissible and "max_volatility" in res.failed

    def test_zero_volume_rejected(self):
        book = self.book(["1", "1", "1"], volumes=())
        res = qualify_asset(ALPHA, book, QualificationRule(min_liquidity=dec(1), lookback=2))
        assert not res.admissible and "min_liquidity" in res.failed

    def test_insufficient_history(self):
        book = self.book(["1"])
        res = qualify_asset(ALPHA, book, QualificationRule(lookback=5))
        assert not res.admissible and res.failed == ("insufficient_history",)


class TestStakeRatio:
    def test_pass(self):
        assert stake_ratio_check(dec(20), dec(80), mk_params(t_ratio=0.25))

    def test_fail(self):
        assert not stake_ratio_check(dec(30), dec(70), mk_params(t_ratio=0.25))

    def test_zero_multi_asset_passes(self):
        assert stake_ratio_check(ZERO, dec(100), mk_params(t_ratio=0.01))

    def test_both_zero_vacuous(self):
        assert stake_ratio_check(ZERO, ZERO, mk_params())
