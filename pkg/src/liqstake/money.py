"""Fixed-point money arithmetic.

All token and reward amounts are Decimals quantized to 18 fractional
digits (atto units). Context precision is raised to 50 so that amounts up
to ~1e30 survive multiplication before quantization.
"""

from __future__ import annotations

from decimal import Decimal, ROUND_DOWN, ROUND_HALF_EVEN, getcontext

getcontext().prec = 50

DECIMALS = 18
QUANTUM = Decimal(1).scaleb(-DECIMALS)

ZERO = Decimal(0)
ONE = Decimal(1)

# absolute tolerance for money comparisons
TOL = Decimal("1e-12")


def dec(x) -> Decimal:
    """Convert to Decimal. Floats go through repr, so 0.9 becomes
    Decimal('0.9') — deterministic (repr is injective on floats)."""
    if isinstance(x, Decimal):
        return x
    if isinstance(x, float):
        return Decimal(repr(float(x)))  # float() also normalizes numpy scalars
    return Decimal(x)


def fmt(x: Decimal) -> str:
    """Fixed-point string for exports (never scientific notation)."""
    return format(x, "f")


def q(x) -> Decimal:
    """Quantize a money amount to 18 fractional digits (banker's rounding)."""
    return dec(x).quantize(QUANTUM, rounding=ROUND_HALF_EVEN)


def q_down(x) -> Decimal:
    """Quantize rounding toward zero; used where a hard cap must hold."""
    return dec(x).quantize(QUANTUM, rounding=ROUND_DOWN)


def near(a: Decimal, b: Decimal, tol: Decimal = TOL) -> bool:
    """Absolute-tolerance equality for money amounts."""
    return abs(dec(a) - dec(b)) <= tol
