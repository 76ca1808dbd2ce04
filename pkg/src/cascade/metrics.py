"""Valuation and risk measures computed from payment matrices.

Expectations are accumulated exactly (integers times rational weights) and
divided once at the end.  Present values are the single place floating point
enters, because discount factors are real numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .engine import PaymentMatrix, run_scenarios
from .inflows import PoolSpec, enumerate_scenarios, sample_scenarios
from .errors import BadCurve, BadLevel, EmptyInput, LengthMismatch, NegativeInput, UnknownPosition, WeightMismatch
from .money import Money
from .structure import StructureSpec, validate_spec


@dataclass(frozen=True)
class DiscountCurve:
    factors: tuple[float, ...]

    def __post_init__(self):
        if any(not 0.0 <= d <= 1.0 for d in self.factors):
            raise BadCurve("discount factors must lie in [0, 1]")

    @classmethod
    def flat(cls, horizon: int) -> "DiscountCurve":
        return cls((1.0,) * horizon)


@dataclass(frozen=True)
class LossSummary:
    expected_loss: Fraction
    shortfall_probability: Fraction
    quantiles: Mapping[Fraction, Money]
    losses: tuple[Money, ...] = ()


@dataclass(frozen=True)
class PositionMetrics:
    expected_payments: tuple[Fraction, ...]
    present_value: float
    expected_loss: Fraction
    shortfall_probability: Fraction
    quantiles: Mapping[Fraction, Money]
    losses: tuple[Money, ...]


@dataclass(frozen=True)
class MetricReport:
    positions: Mapping[str, PositionMetrics]
    scenario_count: int
    weighted: bool = False


def _weights(matrices: Sequence, weights) -> list[Fraction]:
    if not matrices:
        raise EmptyInput("at least one payment matrix is required")
    if weights is None:
        return [Fraction(1, len(matrices))] * len(matrices)
    weights = [Fraction(w) for w in weights]
    if len(weights) != len(matrices):
        raise WeightMismatch(f"{len(weights)} weights for {len(matrices)} matrices")
    if any(w < 0 for w in weights) or sum(weights) != 1:
        raise WeightMismatch("weights must be >= 0 and sum to 1")
    return weights


def _uniform(weights) -> bool:
    return weights is None


def expected_payments(matrices: Sequence[PaymentMatrix], weights=None) -> dict[str, list[Fraction]]:
    """E[P_{p,t}] per position: probability-weighted or plain sample mean."""
    w = _weights(matrices, weights)
    out = {}
    horizon = len(matrices[0].periods)
    for p in matrices[0].positions:
        if _uniform(weights):
            sums = [0] * horizon
            for m in matrices:
                for t, x in enumerate(m.paid(p)):
                    sums[t] += x
            out[p] = [Fraction(s, len(matrices)) for s in sums]
        else:
            acc = [Fraction(0)] * horizon
            for m, wi in zip(matrices, w):
                if wi:
                    for t, x in enumerate(m.paid(p)):
                        acc[t] += x * wi
            out[p] = acc
    return out


def present_value(path: Sequence, curve) -> float:
    """Discounted sum of an expected payment path."""
    factors = curve.factors if isinstance(curve, DiscountCurve) else tuple(curve)
    if len(factors) != len(path):
        raise LengthMismatch(f"path has {len(path)} periods, curve has {len(factors)}")
    return float(sum(float(d) * float(x) for d, x in zip(factors, path)))


def cumulative_loss(matrix: PaymentMatrix, position: str) -> Money:
    """Sum over periods of positive due-minus-paid shortfalls."""
    if position not in matrix.positions:
        raise UnknownPosition(f"no position {position!r} in payment matrix")
    return sum(max(pa.dues[position] - pa.payments[position], 0) for pa in matrix.periods)


def _level(level) -> Fraction:
    lv = Fraction(str(level)) if isinstance(level, float) else Fraction(level)
    if not 0 < lv < 1:
        raise BadLevel(f"quantile level must lie in (0, 1), got {level}")
    return lv


def weighted_quantile(values: Sequence[Money], weights: Sequence[Fraction], level) -> Money:
    """Nearest rank: smallest value whose cumulative weight reaches ``level``."""
    lv = _level(level)
    pairs = sorted(zip(values, weights), key=lambda vw: vw[0])
    acc = Fraction(0)
    for v, w in pairs:
        acc += w
        if acc >= lv:
            return v
    return pairs[-1][0]


def loss_distribution(matrices: Sequence[PaymentMatrix], weights=None, levels=()) -> dict[str, LossSummary]:
    w = _weights(matrices, weights)
    levels = [_level(lv) for lv in levels]
    out = {}
    for p in matrices[0].positions:
        losses = [cumulative_loss(m, p) for m in matrices]
        if _uniform(weights):
            n = len(matrices)
            el = Fraction(sum(losses), n)
            pr = Fraction(sum(1 for x in losses if x > 0), n)
        else:
            el = sum((x * wi for x, wi in zip(losses, w)), Fraction(0))
            pr = sum((wi for x, wi in zip(losses, w) if x > 0), Fraction(0))
        quantiles = {lv: weighted_quantile(losses, w, lv) for lv in levels}
        out[p] = LossSummary(el, pr, quantiles, tuple(losses))
    return out


def build_report(matrices: Sequence[PaymentMatrix], weights=None, curve: Optional[DiscountCurve] = None,
                 levels=()) -> MetricReport:
    paths = expected_payments(matrices, weights)
    dist = loss_distribution(matrices, weights, levels)
    horizon = len(matrices[0].periods)
    curve = curve or DiscountCurve.flat(horizon)
    positions = {}
    for p, path in paths.items():
        d = dist[p]
        positions[p] = PositionMetrics(
            expected_payments=tuple(path),
            present_value=present_value(path, curve),
            expected_loss=d.expected_loss,
            shortfall_probability=d.shortfall_probability,
            quantiles=d.quantiles,
            losses=d.losses,
        )
    return MetricReport(positions, len(matrices), weights is not None)


def with_notional(spec: StructureSpec, position: str, notional: Money,
                  balance_with: Optional[str] = None) -> StructureSpec:
    """Copy of ``spec`` with one notional changed.

    With ``balance_with`` the named position absorbs the difference so the
    total notional stays fixed.
    """
    spec.position(position)
    delta = notional - spec.position(position).notional
    positions = []
    for p in spec.positions:
        if p.name == position:
            p = replace(p, notional=notional)
        elif balance_with is not None and p.name == balance_with:
            p = replace(p, notional=p.notional - delta)
        positions.append(p)
    if balance_with is not None and balance_with not in spec.position_names:
        raise UnknownPosition(f"no position {balance_with!r}")
    return replace(spec, positions=tuple(positions))


def thickness_sensitivity(spec: StructureSpec, scenarios, position: str, grid: Sequence[Money], *,
                          weights=None, levels=(), balance_with: Optional[str] = None,
                          threads: Optional[int] = None, seed: Optional[int] = None,
                          count: Optional[int] = None) -> dict[Money, dict[str, LossSummary]]:
    """Loss distributions as one notional moves across ``grid``.

    ``scenarios`` is either a scenario list or a PoolSpec.  A pool is sampled
    once with ``seed`` and ``count`` when both are given, otherwise enumerated.
    The scenario set is then fixed: only the allocation is re-run per point.
    """
    if position not in spec.position_names:
        raise UnknownPosition(f"no position {position!r}")
    if any(g < 0 for g in grid):
        raise NegativeInput("notional grid values must be >= 0")
    if isinstance(scenarios, PoolSpec):
        if seed is not None and count is not None:
            scenarios = sample_scenarios(scenarios, seed, range(count), threads or 1)
        else:
            scenarios = enumerate_scenarios(scenarios)
    scenarios = list(scenarios)
    if weights is None and scenarios and scenarios[0].weight is not None:
        weights = [sc.weight for sc in scenarios]
    out = {}
    for notional in grid:
        point = validate_spec(with_notional(spec, position, notional, balance_with))
        matrices = run_scenarios(point, scenarios, threads)
        out[notional] = loss_distribution(matrices, weights, levels)
    return out
