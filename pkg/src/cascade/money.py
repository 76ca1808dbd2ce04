"""Exact money helpers.

Amounts are plain ``int`` values in minor currency units. Anything fractional
(rates, weights, probabilities) is a :class:`fractions.Fraction` until it is
rounded back to minor units, and rounding is always half-even.
"""

from __future__ import annotations

from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Union

Money = int
BPS = 10_000

Rational = Union[int, Fraction]


def round_half_even(value: Rational) -> int:
    """Round an exact rational to the nearest integer, ties to even."""
    value = Fraction(value)
    floor, rem = divmod(value.numerator, value.denominator)
    twice = 2 * rem
    if twice > value.denominator or (twice == value.denominator and floor % 2 == 1):
        return floor + 1
    return floor


def apply_bps(amount: Money, bps: int) -> Money:
    return round_half_even(Fraction(amount * bps, BPS))


def parse_rational(text) -> Fraction:
    """Parse ``"0.25"``, ``"1/3"`` or an int into an exact Fraction.

    Floats are refused: they would smuggle binary rounding into exact data.
    """
    if isinstance(text, bool) or isinstance(text, float):
        raise ValueError(f"expected a decimal string, got {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, Fraction):
        return text
    if not isinstance(text, str):
        raise ValueError(f"expected a decimal string, got {text!r}")
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a rational number: {text!r}") from exc


def _terminates(value: Fraction) -> bool:
    d = value.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


def format_rational(value: Rational) -> str:
    """Canonical text for an exact rational: decimal if it terminates, else ``p/q``."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    if _terminates(value):
        return format_decimal(value)
    return f"{value.numerator}/{value.denominator}"


def format_decimal(value: Rational, places: int | None = None) -> str:
    """Plain decimal string, no exponent.

    Exact when ``value`` terminates and ``places`` is None; otherwise rounded
    half-even to ``places`` (default 12) fractional digits.
    """
    value = Fraction(value)
    if places is None and not _terminates(value):
        places = 12
    with localcontext() as ctx:
        ctx.prec = 200
        dec = Decimal(value.numerator) / Decimal(value.denominator)
        if places is not None:
            dec = dec.quantize(Decimal(1).scaleb(-places))
    text = format(dec, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def to_major(amount: Rational, exponent: int = 2) -> Fraction:
    return Fraction(amount) / (10 ** exponent)
