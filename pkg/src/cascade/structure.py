"""Contractual objects of a structure: positions, tiers, triggers and rules.

A :class:`StructureSpec` is the declarative form of the allocation operator.
Everything here is an immutable value once validated; the only per-scenario
object is :class:`StructureState`, which the engine replaces (never mutates)
from one period to the next.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

from .errors import UnknownMetric, ValidationError, Violation
from .money import Money, apply_bps, round_half_even

KINDS = ("cost", "note", "residual")
MODES = ("sequential", "pro_rata")
METRICS = (
    "cumulative_pool_loss",
    "cumulative_position_shortfall",
    "residual_balance",
    "period_inflow",
    "period_index",
)
COMPARATORS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}
EFFECTS = ("use_tier_order", "divert_residual_to", "zero_dues_of")
ALWAYS = "always"


@dataclass(frozen=True)
class ContractParams:
    """Position-specific contract terms.

    ``rate_bps`` is a per-period rate on outstanding notional.  ``amortizing``
    adds a straight-line principal schedule running to the position's
    maturity; ``cumulative_dues`` carries unpaid interest and cost into the
    next period's due.
    """

    rate_bps: int = 0
    cap: Optional[Money] = None
    cumulative_dues: bool = False
    amortizing: bool = False


@dataclass(frozen=True)
class Position:
    name: str
    kind: str
    notional: Money = 0
    priority_rank: int = 0
    maturity: Optional[int] = None
    params: ContractParams = field(default_factory=ContractParams)
    due_schedule: Optional[Mapping[int, Money]] = None


@dataclass(frozen=True)
class Tier:
    name: str
    mode: str
    members: tuple[str, ...]
    weights: Optional[tuple[Fraction, ...]] = None


@dataclass(frozen=True)
class Trigger:
    name: str
    metric: str
    comparator: str
    threshold: int
    latching: bool = False
    position: Optional[str] = None  # only for cumulative_position_shortfall


@dataclass(frozen=True)
class Rule:
    """``when`` is a trigger name or ``"always"``.

    ``target`` is a tuple of tier names for ``use_tier_order`` and a position
    name for the other two effects.
    """

    when: str
    effect: str
    target: object


@dataclass(frozen=True)
class StructureSpec:
    name: str
    horizon: int
    positions: tuple[Position, ...]
    tiers: tuple[Tier, ...]
    triggers: tuple[Trigger, ...] = ()
    rules: tuple[Rule, ...] = ()
    initial_residual: Money = 0

    def position(self, name: str) -> Position:
        for p in self.positions:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def position_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.positions)

    @property
    def tier_order(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.tiers)


@dataclass(frozen=True)
class PositionState:
    outstanding: Money
    paid: Money = 0
    shortfall: Money = 0
    arrears: Money = 0


@dataclass(frozen=True)
class StructureState:
    """Start-of-period state; ``inflow`` is set once the period's collections are known."""

    period: int
    residual: Money
    positions: Mapping[str, PositionState]
    pool_loss: Money = 0
    latched: frozenset = frozenset()
    inflow: Optional[Money] = None


def initial_state(spec: StructureSpec) -> StructureState:
    return StructureState(
        period=0,
        residual=spec.initial_residual,
        positions={p.name: PositionState(outstanding=p.notional) for p in spec.positions},
    )


# ---------------------------------------------------------------- validation


def validate_spec(spec: StructureSpec) -> StructureSpec:
    """Return ``spec`` unchanged if it is well formed.

    Raises :class:`ValidationError` listing every violation found.
    """
    out: list[Violation] = []

    def bad(code, path, message):
        out.append(Violation(code, path, message))

    if not isinstance(spec.horizon, int) or spec.horizon < 1:
        bad("BadHorizon", "horizon", f"horizon must be >= 1, got {spec.horizon!r}")
    horizon = spec.horizon if isinstance(spec.horizon, int) else 0
    if spec.initial_residual < 0:
        bad("NegativeAmount", "initial_residual", "initial residual must be >= 0")
    if not spec.positions:
        bad("EmptyStructure", "positions", "a structure needs at least one position")

    names: dict[str, Position] = {}
    for i, p in enumerate(spec.positions):
        path = f"positions[{i}]"
        if p.name in names:
            bad("DuplicatePosition", f"{path}.name", f"position {p.name!r} declared twice")
        names.setdefault(p.name, p)
        if p.kind not in KINDS:
            bad("BadKind", f"{path}.kind", f"unknown kind {p.kind!r}")
        if p.notional < 0:
            bad("NegativeAmount", f"{path}.notional", "notional must be >= 0")
        if p.params.cap is not None and p.params.cap < 0:
            bad("NegativeAmount", f"{path}.contract_params.cap", "cap must be >= 0")
        if p.params.rate_bps < 0:
            bad("NegativeAmount", f"{path}.contract_params.rate_bps", "rate must be >= 0")
        if p.maturity is not None and not 0 <= p.maturity < horizon:
            bad("BadMaturity", f"{path}.maturity", f"maturity {p.maturity} outside 0..{horizon - 1}")
        if p.params.amortizing and p.maturity is None:
            bad("BadContract", f"{path}.contract_params.amortizing", "amortizing positions need a maturity")
        if p.due_schedule is not None:
            if p.params.amortizing or p.params.cumulative_dues:
                bad("BadContract", f"{path}.due_schedule",
                    "explicit schedules exclude amortizing and cumulative_dues")
            for t, amount in p.due_schedule.items():
                if not 0 <= t < horizon:
                    bad("BadSchedule", f"{path}.due_schedule.{t}", f"period {t} outside 0..{horizon - 1}")
                if amount < 0:
                    bad("NegativeAmount", f"{path}.due_schedule.{t}", "due must be >= 0")

    tier_names: set[str] = set()
    membership: dict[str, list[str]] = {n: [] for n in names}
    for i, tier in enumerate(spec.tiers):
        path = f"tiers[{i}]"
        if tier.name in tier_names:
            bad("DuplicateName", f"{path}.name", f"tier {tier.name!r} declared twice")
        tier_names.add(tier.name)
        if tier.mode not in MODES:
            bad("BadMode", f"{path}.mode", f"unknown mode {tier.mode!r}")
        if not tier.members:
            bad("EmptyTier", f"{path}.members", "a tier needs at least one member")
        for j, m in enumerate(tier.members):
            if m not in names:
                bad("UnresolvedReference", f"{path}.members[{j}]", f"no position named {m!r}")
            else:
                membership[m].append(tier.name)
        if tier.mode == "pro_rata":
            w = tier.weights
            if w is None or len(w) != len(tier.members):
                bad("BadWeights", f"{path}.weights", "pro_rata tiers need one weight per member")
            elif any(x < 0 for x in w) or sum(w, Fraction(0)) != 1:
                bad("BadWeights", f"{path}.weights", f"weights must be >= 0 and sum to 1, got sum {sum(w, Fraction(0))}")
            for j, m in enumerate(tier.members):
                if m in names and names[m].kind == "residual":
                    bad("ResidualPlacement", f"{path}.members[{j}]", "residual positions cannot sit in a pro_rata tier")
        elif tier.mode == "sequential":
            if tier.weights is not None:
                bad("BadWeights", f"{path}.weights", "sequential tiers take no weights")
            known = [names[m] for m in tier.members if m in names]
            for a, b in zip(known, known[1:]):
                if a.priority_rank >= b.priority_rank:
                    bad("PriorityOrder", f"{path}.members",
                        f"{a.name!r} (rank {a.priority_rank}) must rank strictly above {b.name!r} (rank {b.priority_rank})")
            for j, m in enumerate(tier.members):
                if m in names and names[m].kind == "residual" and j != len(tier.members) - 1:
                    bad("ResidualPlacement", f"{path}.members[{j}]", "a residual position must be the last member of its tier")

    for n, tiers in membership.items():
        if len(tiers) != 1:
            bad("TierMembership", f"positions.{n}", f"position must belong to exactly one tier, found {len(tiers)}")

    ranked = [[names[m].priority_rank for m in t.members if m in names] for t in spec.tiers]
    ranked = [r for r in ranked if r]
    for (i, a), b in zip(enumerate(ranked), ranked[1:]):
        if max(a) >= min(b):
            bad("PriorityOrder", f"tiers[{i + 1}]", "tier ranks must follow the declared tier order")

    trig_names: set[str] = set()
    for i, tr in enumerate(spec.triggers):
        path = f"triggers[{i}]"
        if tr.name in trig_names or tr.name == ALWAYS:
            bad("DuplicateName", f"{path}.name", f"trigger name {tr.name!r} is taken")
        trig_names.add(tr.name)
        if tr.metric not in METRICS:
            bad("UnknownMetric", f"{path}.metric", f"unknown metric {tr.metric!r}")
        if tr.comparator not in COMPARATORS:
            bad("BadComparator", f"{path}.comparator", f"unknown comparator {tr.comparator!r}")
        if tr.metric == "cumulative_position_shortfall":
            if tr.position not in names:
                bad("UnresolvedReference", f"{path}.position", f"no position named {tr.position!r}")
        elif tr.position is not None:
            bad("BadTrigger", f"{path}.position", f"metric {tr.metric!r} takes no position")

    for i, rule in enumerate(spec.rules):
        path = f"rules[{i}]"
        if rule.when != ALWAYS and rule.when not in trig_names:
            bad("UnresolvedReference", f"{path}.when", f"no trigger named {rule.when!r}")
        if rule.effect == "use_tier_order":
            order = tuple(rule.target) if isinstance(rule.target, (list, tuple)) else ()
            for j, t in enumerate(order):
                if t not in tier_names:
                    bad("UnresolvedReference", f"{path}.use_tier_order[{j}]", f"no tier named {t!r}")
            if sorted(order) != sorted(tier_names):
                bad("BadTierOrder", f"{path}.use_tier_order", "a tier order must list every tier exactly once")
        elif rule.effect in ("divert_residual_to", "zero_dues_of"):
            if rule.target not in names:
                bad("UnresolvedReference", f"{path}.{rule.effect}", f"no position named {rule.target!r}")
        else:
            bad("BadEffect", f"{path}.effect", f"unknown effect {rule.effect!r}")

    if out:
        raise ValidationError(out)
    return spec


# ---------------------------------------------------------------- dues


def scheduled_balance(notional: Money, maturity: int, t: int) -> Money:
    """Straight-line target balance after period ``t`` for an amortizing note."""
    if t >= maturity:
        return 0
    return round_half_even(Fraction(notional * (maturity - t), maturity + 1))


def due_components(position: Position, state: StructureState, t: int) -> tuple[Money, Money]:
    """Split the period-``t`` due into (interest-and-cost, principal).

    The cap applies to the sum; interest is served first.
    """
    if position.due_schedule is not None:
        return position.due_schedule.get(t, 0), 0
    ps = state.positions[position.name]
    gp = position.params
    live = position.maturity is None or t <= position.maturity
    income = apply_bps(ps.outstanding, gp.rate_bps) if live else 0
    if gp.cumulative_dues:
        income += ps.arrears
    principal = 0
    if gp.amortizing:
        principal = max(ps.outstanding - scheduled_balance(position.notional, position.maturity, t), 0)
    if gp.cap is not None and income + principal > gp.cap:
        income = min(income, gp.cap)
        principal = gp.cap - income
    return income, principal


def derive_dues(position: Position, state: StructureState, t: int) -> Money:
    """Contractual amount owed to ``position`` in period ``t``."""
    income, principal = due_components(position, state, t)
    return income + principal


# ---------------------------------------------------------------- triggers


def trigger_metric(trigger: Trigger, state: StructureState, t: int) -> int:
    m = trigger.metric
    if m == "cumulative_pool_loss":
        return state.pool_loss
    if m == "cumulative_position_shortfall":
        try:
            return state.positions[trigger.position].shortfall
        except KeyError:
            raise UnknownMetric(f"state carries no position {trigger.position!r}") from None
    if m == "residual_balance":
        return state.residual
    if m == "period_inflow":
        if state.inflow is None:
            raise UnknownMetric("period inflow is not known for this state")
        return state.inflow
    if m == "period_index":
        return t
    raise UnknownMetric(f"unknown metric {m!r}")


def evaluate_trigger(trigger: Trigger, state: StructureState, t: int) -> int:
    """Evaluate a trigger on the start-of-period state; returns 0 or 1."""
    if trigger.latching and trigger.name in state.latched:
        return 1
    try:
        cmp = COMPARATORS[trigger.comparator]
    except KeyError:
        raise UnknownMetric(f"unknown comparator {trigger.comparator!r}") from None
    return int(cmp(trigger_metric(trigger, state, t), trigger.threshold))
