"""Service-fee-credit accounting: per-round replenishment caps, account
limits, consumption, rollover, and the global credit budget.

Credits are non-transferable by construction: no operation moves balance
between accounts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Mapping

from .money import TOL, ZERO, dec, q


class OverdraftError(ValueError):
    pass


class DataIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class CreditAccount:
    address: str
    cap: Decimal = ZERO
    balance: Decimal = ZERO
    usage: Mapping[str, Decimal] = field(default_factory=dict)  # per service

    def consumed(self) -> Decimal:
        return sum(self.usage.values(), ZERO)


def asset_cap(reserve_size: Decimal, price: Decimal, gamma: float) -> Decimal:
    """Round replenishment cap for one asset: size * price * gamma."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must be in [0, 1]")
    return q(reserve_size * price * dec(gamma))


def account_cap(shares: Mapping[str, float], asset_caps: Mapping[str, Decimal]) -> Decimal:
    """Account limit: sum over reserves of share * asset cap."""
    total = ZERO
    for sym, s in shares.items():
        if not (0.0 <= s <= 1.0):
            raise DataIntegrityError(f"share {s} for {sym!r} outside [0, 1]")
        total += q(dec(s) * asset_caps.get(sym, ZERO))
    return total


def consume(account: CreditAccount, service: str, amount: Decimal) -> CreditAccount:
    """Spend credits on a service; overdrafts are rejected unchanged."""
    amount = dec(amount)
    if amount < 0:
        raise ValueError("amount must be >= 0")
    if amount > account.balance:
        raise OverdraftError(
            f"account {account.address!r}: consume {amount} exceeds balance {account.balance}"
        )
    usage = dict(account.usage)
    usage[service] = usage.get(service, ZERO) + amount
    return replace(account, balance=account.balance - amount, usage=usage)


def round_rollover(account: CreditAccount, new_cap: Decimal) -> tuple[CreditAccount, Decimal]:
    """Close the round: unused credits expire, the balance resets to the
    new cap. Returns the account and the replenishment cap - end balance."""
    delta = account.cap - account.balance
    fresh = CreditAccount(address=account.address, cap=new_cap, balance=new_cap, usage={})
    return fresh, delta


def credit_budget(prev_budget: Decimal, delta: Decimal, issued_caps: Decimal) -> Decimal:
    """B_R = B_{R-1} + dB_R - sum of caps issued last round."""
    return prev_budget + dec(delta) - issued_caps


@dataclass(frozen=True)
class CreditBook:
    """All credit state: the running round, its budget, per-asset caps
    issued, per-account state, and ownership shares used at rollover."""

    round_index: int = 0
    budget: Decimal = ZERO
    asset_caps: Mapping[str, Decimal] = field(default_factory=dict)
    accounts: Mapping[str, CreditAccount] = field(default_factory=dict)
    shares: Mapping[str, Mapping[str, float]] = field(default_factory=dict)  # address -> symbol -> share
    deficit: Decimal = ZERO

    def issued(self) -> Decimal:
        return sum(self.asset_caps.values(), ZERO)

    def validate_shares(self) -> None:
        per_asset: dict[str, float] = {}
        for addr in self.shares:
            for sym, s in self.shares[addr].items():
                per_asset[sym] = per_asset.get(sym, 0.0) + s
        for sym, total in per_asset.items():
            if total > 1.0 + 1e-9:
                raise DataIntegrityError(f"shares for {sym!r} sum to {total} > 1")


def open_round(
    book: CreditBook,
    sizes: Mapping[str, Decimal],
    prices: Mapping[str, Decimal],
    gammas: Mapping[str, float],
    delta_budget: Decimal,
) -> tuple[CreditBook, dict[str, Decimal]]:
    """Advance the book into the next round.

    Expires unused balances, applies the budget recursion, issues new
    per-asset caps (scaled down proportionally when they exceed the
    budget), and resets every account to its new cap. Returns the book
    and the per-account replenishment amounts.
    """
    book.validate_shares()
    new_budget = credit_budget(book.budget, delta_budget, book.issued())
    deficit = ZERO
    if new_budget < 0:
        deficit = -new_budget
        new_budget = ZERO

    caps = {sym: asset_cap(sizes[sym], prices[sym], gammas.get(sym, 0.0)) for sym in sorted(sizes)}
    total = sum(caps.values(), ZERO)
    if total > new_budget:
        if new_budget <= 0:
            caps = {sym: ZERO for sym in caps}
        else:
            scale = new_budget / total
            scaled = {sym: q(caps[sym] * scale) for sym in caps}
            # rounding may leave dust above the budget; shave the largest cap
            over = sum(scaled.values(), ZERO) - new_budget
            if over > 0:
                biggest = max(sorted(scaled), key=lambda s: scaled[s])
                scaled[biggest] -= over
            caps = scaled

    replenishments: dict[str, Decimal] = {}
    accounts: dict[str, CreditAccount] = {}
    addresses = sorted(set(book.accounts) | set(book.shares))
    for addr in addresses:
        acct = book.accounts.get(addr, CreditAccount(address=addr))
        new_cap = account_cap(book.shares.get(addr, {}), caps)
        fresh, delta = round_rollover(acct, new_cap)
        accounts[addr] = fresh
        replenishments[addr] = delta

    next_book = CreditBook(
        round_index=book.round_index + 1,
        budget=new_budget,
        asset_caps=caps,
        accounts=accounts,
        shares=book.shares,
        deficit=deficit,
    )
    return next_book, replenishments


def spend(book: CreditBook, address: str, service: str, amount: Decimal) -> CreditBook:
    """Consume credits for one account inside the current round."""
    acct = book.accounts.get(address)
    if acct is None:
        raise OverdraftError(f"unknown credit account {address!r}")
    updated = consume(acct, service, amount)
    accounts = dict(book.accounts)
    accounts[address] = updated
    return replace(book, accounts=accounts)


def check_balances(book: CreditBook) -> None:
    """Assert balance = cap - total usage for every account."""
    for addr in sorted(book.accounts):
        acct = book.accounts[addr]
        if abs(acct.balance - (acct.cap - acct.consumed())) > TOL:
            raise DataIntegrityError(f"account {addr!r}: balance drifted from cap - usage")
