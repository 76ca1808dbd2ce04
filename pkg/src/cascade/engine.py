"""The allocation operator: sequential and pro-rata splits, one period, a full run."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .errors import BadWeights, LengthMismatch, NegativeInput
from .money import Money
from .structure import (
    ALWAYS,
    PositionState,
    StructureSpec,
    StructureState,
    due_components,
    evaluate_trigger,
    initial_state,
)


@dataclass(frozen=True)
class PeriodAllocation:
    period: int
    inflow: Money
    available: Money
    payments: Mapping[str, Money]
    dues: Mapping[str, Money]
    residual_after: Money
    effective_tier_order: tuple[str, ...] = ()
    trigger_values: Mapping[str, int] = None

    @property
    def residual_before(self) -> Money:
        return self.available - self.inflow


@dataclass(frozen=True)
class PaymentMatrix:
    """Every period's allocation for one scenario."""

    scenario: int
    periods: tuple[PeriodAllocation, ...]
    final_state: Optional[StructureState] = None

    @property
    def positions(self) -> tuple[str, ...]:
        return tuple(self.periods[0].payments) if self.periods else ()

    def paid(self, position: str) -> list[Money]:
        return [pa.payments[position] for pa in self.periods]

    def dues(self, position: str) -> list[Money]:
        return [pa.dues[position] for pa in self.periods]

    @property
    def residuals(self) -> list[Money]:
        return [pa.residual_after for pa in self.periods]


# ---------------------------------------------------------------- splitting


def allocate_sequential(available: Money, dues: Sequence[Money]) -> tuple[list[Money], Money]:
    """Pay each due in order from what is left; return payments and the remainder."""
    if available < 0 or any(d < 0 for d in dues):
        raise NegativeInput("available funds and dues must be >= 0")
    remaining = available
    payments = []
    for due in dues:
        pay = min(due, remaining)
        payments.append(pay)
        remaining -= pay
    return payments, remaining


def _largest_remainder(budget: Money, weights: dict[int, Fraction]) -> dict[int, Money]:
    total = sum(weights.values())
    shares = {i: budget * w / total for i, w in weights.items()}
    out = {i: s.numerator // s.denominator for i, s in shares.items()}
    left = budget - sum(out.values())
    # larger fractional part first, lower index on ties
    order = sorted(shares, key=lambda i: (-(shares[i] - out[i]), i))
    for i in order[:left]:
        out[i] += 1
    return out


def allocate_pro_rata(
    available: Money, dues: Sequence[Money], weights: Sequence[Fraction]
) -> tuple[list[Money], Money]:
    """Capped proportional split.

    Members whose proportional share reaches their due are paid in full and
    drop out; the rest of the budget is re-split over the remaining members by
    renormalised weight.  When nobody caps, the integer split uses largest
    remainders with the lower index winning ties.  If only zero-weight members
    are still owed, they share equally, so the tier is always either fully paid
    or out of funds.
    """
    if len(weights) != len(dues):
        raise BadWeights("one weight per due is required")
    weights = [Fraction(w) for w in weights]
    if any(w < 0 for w in weights) or sum(weights, Fraction(0)) != 1:
        raise BadWeights("weights must be >= 0 and sum to 1")
    if available < 0 or any(d < 0 for d in dues):
        raise NegativeInput("available funds and dues must be >= 0")

    payments = [0] * len(dues)
    budget = available
    open_ = [i for i, d in enumerate(dues) if d > 0]
    while open_ and budget > 0:
        active = {i: weights[i] for i in open_ if weights[i] > 0}
        if not active:
            active = {i: Fraction(1) for i in open_}
        total = sum(active.values())
        capped = [i for i in active if budget * active[i] >= dues[i] * total]
        if capped:
            for i in capped:
                payments[i] = dues[i]
                budget -= dues[i]
            open_ = [i for i in open_ if i not in capped]
            continue
        for i, amount in _largest_remainder(budget, active).items():
            payments[i] = amount
        budget = 0
    return payments, budget


# ---------------------------------------------------------------- one period


def _effects(spec: StructureSpec, values: Mapping[str, int]):
    order = None
    divert = None
    zeroed = set()
    for rule in spec.rules:
        if rule.when != ALWAYS and not values[rule.when]:
            continue
        if rule.effect == "use_tier_order" and order is None:
            order = tuple(rule.target)
        elif rule.effect == "divert_residual_to" and divert is None:
            divert = rule.target
        elif rule.effect == "zero_dues_of":
            zeroed.add(rule.target)
    return order or spec.tier_order, divert, zeroed


def allocate_period(
    spec: StructureSpec, state: StructureState, inflow: Money, pool_loss: Money = 0
) -> tuple[PeriodAllocation, StructureState]:
    """Run the waterfall for period ``state.period``.

    ``pool_loss`` is the pool loss recognised this period; it enters the
    cumulative loss seen by triggers from the next period on.
    """
    if inflow < 0 or pool_loss < 0:
        raise NegativeInput("inflows and pool losses must be >= 0")
    t = state.period
    state = replace(state, inflow=inflow)
    available = inflow + state.residual

    values = {tr.name: evaluate_trigger(tr, state, t) for tr in spec.triggers}
    order, divert, zeroed = _effects(spec, values)

    positions = {p.name: p for p in spec.positions}
    parts = {}
    for p in spec.positions:
        income, principal = due_components(p, state, t)
        parts[p.name] = (0, 0) if p.name in zeroed else (income, principal)
    dues = {n: i + pr for n, (i, pr) in parts.items()}
    payments = dict.fromkeys(dues, 0)

    tiers = {tier.name: tier for tier in spec.tiers}
    budget = available
    for tname in order:
        tier = tiers[tname]
        members = tier.members
        if tier.mode == "pro_rata":
            paid, budget = allocate_pro_rata(budget, [dues[m] for m in members], tier.weights)
        else:
            last = positions[members[-1]]
            if last.kind == "residual" and last.name not in zeroed:
                head, budget = allocate_sequential(budget, [dues[m] for m in members[:-1]])
                dues[last.name] = budget
                paid, budget = head + [budget], 0
            else:
                paid, budget = allocate_sequential(budget, [dues[m] for m in members])
        for m, amount in zip(members, paid):
            payments[m] = amount

    extra = 0
    if divert is not None and budget > 0:
        target = positions[divert]
        extra = budget
        if target.kind == "note":
            ps = state.positions[divert]
            principal_paid = max(payments[divert] - parts[divert][0], 0)
            extra = min(budget, max(ps.outstanding - principal_paid, 0))
        payments[divert] += extra
        dues[divert] += extra
        budget -= extra

    next_positions = {}
    for p in spec.positions:
        ps = state.positions[p.name]
        paid = payments[p.name]
        income = parts[p.name][0]
        principal_paid = max(paid - income, 0)
        if p.kind == "residual":
            principal_paid = 0
        arrears = 0
        if p.params.cumulative_dues and p.due_schedule is None:
            if p.name in zeroed:
                arrears = due_components(p, state, t)[0]
            else:
                arrears = income - min(paid, income)
        next_positions[p.name] = PositionState(
            outstanding=max(ps.outstanding - principal_paid, 0),
            paid=ps.paid + paid,
            shortfall=ps.shortfall + max(dues[p.name] - paid, 0),
            arrears=arrears,
        )

    latched = state.latched | {tr.name for tr in spec.triggers if tr.latching and values[tr.name]}
    nxt = StructureState(
        period=t + 1,
        residual=budget,
        positions=next_positions,
        pool_loss=state.pool_loss + pool_loss,
        latched=frozenset(latched),
    )
    alloc = PeriodAllocation(
        period=t,
        inflow=inflow,
        available=available,
        payments=payments,
        dues=dues,
        residual_after=budget,
        effective_tier_order=tuple(order),
        trigger_values=values,
    )
    return alloc, nxt


# ---------------------------------------------------------------- full runs


def run_waterfall(
    spec: StructureSpec,
    inflows: Sequence[Money],
    pool_losses: Optional[Sequence[Money]] = None,
    scenario: int = 0,
) -> PaymentMatrix:
    """Fold :func:`allocate_period` over the horizon starting from the initial residual.

    ``spec`` must already have passed :func:`validate_spec`.
    """
    if len(inflows) != spec.horizon:
        raise LengthMismatch(
            f"inflow path has {len(inflows)} periods, structure horizon is {spec.horizon}",
            expected=spec.horizon, got=len(inflows),
        )
    if pool_losses is None:
        pool_losses = [0] * spec.horizon
    elif len(pool_losses) != spec.horizon:
        raise LengthMismatch(
            f"pool loss path has {len(pool_losses)} periods, structure horizon is {spec.horizon}",
            expected=spec.horizon, got=len(pool_losses),
        )
    if any(f < 0 for f in inflows):
        raise NegativeInput("inflows must be >= 0")
    state = initial_state(spec)
    periods = []
    for f, loss in zip(inflows, pool_losses):
        alloc, state = allocate_period(spec, state, f, loss)
        periods.append(alloc)
    return PaymentMatrix(scenario=scenario, periods=tuple(periods), final_state=state)


def thread_count() -> int:
    raw = os.environ.get("CASCADE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_scenarios(spec: StructureSpec, scenarios, threads: Optional[int] = None) -> list[PaymentMatrix]:
    """Run the waterfall on every scenario, in input order.

    Scenarios are objects with ``scenario``, ``inflows`` and ``losses``.
    Identical paths are allocated once, which is safe because the run is a
    pure function of the path.
    """
    threads = threads or thread_count()
    scenarios = list(scenarios)

    def chunk(items):
        memo = {}
        out = []
        for sc in items:
            key = (tuple(sc.inflows), tuple(sc.losses))
            base = memo.get(key)
            if base is None:
                base = memo[key] = run_waterfall(spec, sc.inflows, sc.losses, sc.scenario)
            out.append(base if base.scenario == sc.scenario else replace(base, scenario=sc.scenario))
        return out

    if threads <= 1 or len(scenarios) < 2:
        return chunk(scenarios)
    size = -(-len(scenarios) // threads)
    parts = [scenarios[i:i + size] for i in range(0, len(scenarios), size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return [m for part in pool.map(chunk, parts) for m in part]
