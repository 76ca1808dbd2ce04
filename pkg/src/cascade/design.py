"""Grid and seeded random search over structural parameters.

All candidate structures are evaluated on one shared scenario set (common
random numbers).  Constraints filter; they never penalise, so the reported
objective is always the raw metric.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Optional, Sequence

import numpy as np

from .engine import run_scenarios
from .errors import BadDesign, BudgetExceeded, CascadeError, EmptyFeasibleSet
from .metrics import DiscountCurve, MetricReport, build_report
from .money import parse_rational
from .structure import COMPARATORS, StructureSpec, validate_spec

OBJECTIVE_METRICS = ("present_value", "expected_payment_total", "negated_expected_loss")
BOUND_METRICS = ("expected_loss", "shortfall_prob", "quantile")


@dataclass(frozen=True)
class Parameter:
    path: str
    values: tuple


@dataclass(frozen=True)
class Constraint:
    kind: str  # total_notional_equals | metric_bound
    amount: int = 0
    position: Optional[str] = None
    metric: Optional[str] = None
    level: Optional[Fraction] = None
    comparator: str = "<="
    bound: Fraction = Fraction(0)

    @property
    def label(self) -> str:
        if self.kind == "total_notional_equals":
            return f"total_notional=={self.amount}"
        metric = self.metric if self.metric != "quantile" else f"quantile[{self.level}]"
        return f"{metric}({self.position}){self.comparator}{self.bound}"


@dataclass(frozen=True)
class DesignSpace:
    base: StructureSpec
    parameters: tuple[Parameter, ...] = ()
    constraints: tuple[Constraint, ...] = ()

    @property
    def size(self) -> int:
        return math.prod(len(p.values) for p in self.parameters)


@dataclass(frozen=True)
class Objective:
    position: str
    metric: str = "present_value"

    def __post_init__(self):
        if self.metric not in OBJECTIVE_METRICS:
            raise BadDesign(f"unknown objective metric {self.metric!r}")


@dataclass
class DesignEvaluation:
    report: MetricReport
    objective: Any
    feasible: bool
    slacks: dict
    violated: tuple
    fingerprint: str


@dataclass
class DesignPoint:
    index: int
    assignment: dict
    evaluation: Optional[DesignEvaluation] = None
    error: Optional[str] = None

    @property
    def feasible(self) -> bool:
        return self.evaluation is not None and self.evaluation.feasible

    @property
    def objective(self):
        return None if self.evaluation is None else self.evaluation.objective


@dataclass
class SearchResult:
    points: list
    ranked: list
    best: Optional[DesignPoint]
    fingerprint: str


def scenario_fingerprint(scenarios) -> str:
    h = hashlib.sha256()
    for sc in scenarios:
        h.update(repr((sc.scenario, tuple(sc.inflows), tuple(sc.losses), sc.weight)).encode())
    return h.hexdigest()


# ---------------------------------------------------------------- instantiation


def _replace_named(items, name, kind, **changes):
    out, hit = [], False
    for it in items:
        if it.name == name:
            it, hit = replace(it, **changes), True
        out.append(it)
    if not hit:
        raise BadDesign(f"no {kind} named {name!r}")
    return tuple(out)


def apply_parameter(spec: StructureSpec, path: str, value) -> StructureSpec:
    """Set one design parameter addressed by a dotted path."""
    head, _, rest = path.partition(".")
    name, _, attr = rest.rpartition(".")
    if head == "positions" and attr == "notional":
        return replace(spec, positions=_replace_named(spec.positions, name, "position", notional=int(value)))
    if head == "triggers" and attr == "threshold":
        return replace(spec, triggers=_replace_named(spec.triggers, name, "trigger", threshold=int(value)))
    if head == "tiers" and attr == "weights":
        weights = tuple(parse_rational(w) for w in value)
        return replace(spec, tiers=_replace_named(spec.tiers, name, "tier", weights=weights))
    if head == "rules" and attr == "tier_order":
        try:
            i = int(name)
            rule = spec.rules[i]
        except (ValueError, IndexError):
            raise BadDesign(f"no rule at index {name!r}") from None
        if rule.effect != "use_tier_order":
            raise BadDesign(f"rule {i} does not select a tier order")
        rules = list(spec.rules)
        rules[i] = replace(rule, target=tuple(value))
        return replace(spec, rules=tuple(rules))
    raise BadDesign(f"unsupported design path {path!r}")


def instantiate(space: DesignSpace, assignment: dict) -> StructureSpec:
    spec = space.base
    for path, value in assignment.items():
        spec = apply_parameter(spec, path, value)
    return validate_spec(spec)


# ---------------------------------------------------------------- evaluation


def _bound_value(report: MetricReport, c: Constraint):
    m = report.positions[c.position]
    if c.metric == "expected_loss":
        return m.expected_loss
    if c.metric == "shortfall_prob":
        return m.shortfall_probability
    return m.quantiles[c.level]


def _slack(value, c: Constraint):
    if c.comparator in ("<", "<="):
        return c.bound - value
    return value - c.bound


def objective_value(report: MetricReport, objective: Objective):
    m = report.positions[objective.position]
    if objective.metric == "present_value":
        return m.present_value
    if objective.metric == "expected_payment_total":
        return sum(m.expected_payments, Fraction(0))
    return -m.expected_loss


def evaluate_design(spec: StructureSpec, scenarios, objective: Objective, curve: Optional[DiscountCurve] = None,
                    constraints: Sequence[Constraint] = (), weights=None, threads=None) -> DesignEvaluation:
    """Allocate and measure one candidate structure on the shared scenario set."""
    scenarios = list(scenarios)
    if weights is None and scenarios and scenarios[0].weight is not None:
        weights = [sc.weight for sc in scenarios]
    levels = sorted({c.level for c in constraints if c.metric == "quantile"})
    matrices = run_scenarios(spec, scenarios, threads)
    report = build_report(matrices, weights, curve, levels)
    if objective.position not in report.positions:
        raise BadDesign(f"objective names unknown position {objective.position!r}")

    slacks, violated = {}, []
    for c in constraints:
        if c.kind == "total_notional_equals":
            total = sum(p.notional for p in spec.positions)
            s = -abs(total - c.amount)
            ok = s == 0
        else:
            if c.position not in report.positions:
                raise BadDesign(f"constraint names unknown position {c.position!r}")
            value = _bound_value(report, c)
            s = _slack(value, c)
            ok = COMPARATORS[c.comparator](value, c.bound)
        slacks[c.label] = s
        if not ok:
            violated.append(c.label)
    return DesignEvaluation(
        report=report,
        objective=objective_value(report, objective),
        feasible=not violated,
        slacks=slacks,
        violated=tuple(violated),
        fingerprint=scenario_fingerprint(scenarios),
    )


def grid_points(space: DesignSpace) -> list[dict]:
    paths = [p.path for p in space.parameters]
    return [dict(zip(paths, combo)) for combo in itertools.product(*(p.values for p in space.parameters))]


def random_points(space: DesignSpace, k: int, seed: int) -> list[dict]:
    gen = np.random.default_rng(seed)
    idx = [gen.integers(0, len(p.values), size=k) for p in space.parameters]
    return [{p.path: p.values[int(ix[j])] for p, ix in zip(space.parameters, idx)} for j in range(k)]


def search(space: DesignSpace, objective: Objective, scenarios, mode: str = "exhaustive_grid", *,
           k: Optional[int] = None, seed: Optional[int] = None, budget: int = 10_000,
           curve: Optional[DiscountCurve] = None, weights=None, threads=None) -> SearchResult:
    """Evaluate candidate structures and rank the feasible ones.

    Ranking is by objective, highest first; ties keep the earlier point.
    Raises EmptyFeasibleSet (carrying the full result and the point with the
    largest worst-case slack) when nothing is feasible.
    """
    scenarios = list(scenarios)
    if mode in ("grid", "exhaustive_grid"):
        if space.size > budget:
            raise BudgetExceeded(f"grid has {space.size} points, budget is {budget}")
        assignments = grid_points(space)
    elif mode == "random":
        if k is None or seed is None:
            raise BadDesign("random search needs k and seed")
        if k > budget:
            raise BudgetExceeded(f"{k} draws requested, budget is {budget}")
        assignments = random_points(space, k, seed)
    else:
        raise BadDesign(f"unknown search mode {mode!r}")

    fingerprint = scenario_fingerprint(scenarios)
    points = []
    for i, assignment in enumerate(assignments):
        point = DesignPoint(i, assignment)
        try:
            spec = instantiate(space, assignment)
            point.evaluation = evaluate_design(spec, scenarios, objective, curve, space.constraints,
                                               weights, threads)
        except CascadeError as exc:
            point.error = exc.code
        points.append(point)

    ranked = sorted((p for p in points if p.feasible), key=lambda p: -p.objective)
    result = SearchResult(points, ranked, ranked[0] if ranked else None, fingerprint)
    if not ranked:
        scored = [p for p in points if p.evaluation is not None]
        nearest = max(scored, key=lambda p: min(p.evaluation.slacks.values(), default=0), default=None)
        err = EmptyFeasibleSet("no feasible design point", nearest=nearest)
        err.result = result
        raise err
    return result
