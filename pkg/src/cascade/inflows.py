"""Stochastic inflows from a pool of cash-flow generating units.

Each unit has a deterministic baseline schedule and can leave it through one
absorbing event: default (flows stop, a recovery arrives after a lag) or
prepayment (outstanding principal arrives as a lump sum).  Scenarios are either
sampled with counter-based streams or enumerated exactly for small pools.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from . import rng
from .errors import (
    BadCorrelation,
    BadPool,
    InconsistentTrace,
    RaggedInput,
    TooLarge,
    UnsupportedDependence,
)
from .money import BPS, Money, apply_bps

DEFAULT = "default"
PREPAY = "prepay"
EVENTS = (DEFAULT, PREPAY)

# Philox stream ids; see sample_scenarios
_EVENT_STREAM = 0
_FACTOR_STREAM = 1

Hazard = Union[int, Sequence[int]]


@dataclass(frozen=True)
class Unit:
    id: str
    baseline: tuple[Money, ...]
    outstanding_principal: Money = 0
    default_hazard: Hazard = 0
    prepay_hazard: Hazard = 0
    recovery_rate: int = 0  # bps of outstanding principal
    recovery_lag: int = 0

    def hazard(self, kind: str, t: int) -> int:
        h = self.default_hazard if kind == DEFAULT else self.prepay_hazard
        return h if isinstance(h, int) else h[t]


@dataclass(frozen=True)
class Event:
    kind: str
    period: int


@dataclass(frozen=True)
class UnitState:
    status: str  # performing | defaulted | prepaid
    since: Optional[int] = None
    pending_recovery: Optional[tuple[int, Money]] = None


@dataclass(frozen=True)
class PoolSpec:
    units: tuple[Unit, ...]
    horizon: int
    dependence: str = "independent"
    correlation: Optional[float] = None


@dataclass(frozen=True)
class InflowScenario:
    scenario: int
    events: Mapping[str, Optional[Event]]
    unit_flows: Mapping[str, tuple[Money, ...]]
    inflows: tuple[Money, ...]
    losses: tuple[Money, ...]
    weight: Optional[Fraction] = None


def validate_pool(pool: PoolSpec) -> PoolSpec:
    if pool.horizon < 1:
        raise BadPool("horizon must be >= 1")
    if pool.dependence not in ("independent", "one_factor"):
        raise UnsupportedDependence(f"unknown dependence {pool.dependence!r}")
    if pool.dependence == "one_factor":
        rho = pool.correlation
        if rho is None or not 0 <= rho <= 1:
            raise BadCorrelation(f"correlation must lie in [0, 1], got {rho!r}")
    seen = set()
    for u in pool.units:
        if u.id in seen:
            raise BadPool(f"unit {u.id!r} declared twice")
        seen.add(u.id)
        if len(u.baseline) != pool.horizon:
            raise BadPool(f"unit {u.id!r}: baseline has {len(u.baseline)} periods, horizon is {pool.horizon}")
        if any(x < 0 for x in u.baseline) or u.outstanding_principal < 0:
            raise BadPool(f"unit {u.id!r}: amounts must be >= 0")
        if not 0 <= u.recovery_rate <= BPS or u.recovery_lag < 0:
            raise BadPool(f"unit {u.id!r}: recovery rate must be in 0..10000 bps, lag >= 0")
        for h in (u.default_hazard, u.prepay_hazard):
            if not isinstance(h, int) and len(h) != pool.horizon:
                raise BadPool(f"unit {u.id!r}: hazard list must cover the horizon")
        for t in range(pool.horizon):
            hd, hp = u.hazard(DEFAULT, t), u.hazard(PREPAY, t)
            if hd < 0 or hp < 0 or hd + hp > BPS:
                raise BadPool(f"unit {u.id!r}: hazards at period {t} must be >= 0 and sum to <= 10000 bps")
    return pool


# ---------------------------------------------------------------- one unit


def _check_trace(trace, horizon: int) -> Optional[Event]:
    events = [trace] if isinstance(trace, Event) else list(trace or ())
    if len(events) > 1:
        raise InconsistentTrace("events are absorbing; a unit can leave performance only once")
    if not events:
        return None
    ev = events[0]
    if ev.kind not in EVENTS:
        raise InconsistentTrace(f"unknown event {ev.kind!r}")
    if not 0 <= ev.period < horizon:
        raise InconsistentTrace(f"event period {ev.period} outside 0..{horizon - 1}")
    return ev


def recovery_amount(unit: Unit) -> Money:
    return apply_bps(unit.outstanding_principal, unit.recovery_rate)


def unit_cashflow(unit: Unit, trace) -> list[Money]:
    """Realised flows of one unit given its event trace (``None``, an Event or a list)."""
    horizon = len(unit.baseline)
    ev = _check_trace(trace, horizon)
    flows = list(unit.baseline)
    if ev is None:
        return flows
    for t in range(ev.period, horizon):
        flows[t] = 0
    if ev.kind == DEFAULT:
        flows[min(ev.period + unit.recovery_lag, horizon - 1)] += recovery_amount(unit)
    else:
        flows[ev.period] = unit.outstanding_principal
    return flows


def unit_losses(unit: Unit, trace) -> list[Money]:
    """Principal written off per period: outstanding less recovery, booked at default."""
    horizon = len(unit.baseline)
    ev = _check_trace(trace, horizon)
    out = [0] * horizon
    if ev is not None and ev.kind == DEFAULT:
        out[ev.period] = max(unit.outstanding_principal - recovery_amount(unit), 0)
    return out


def unit_state_path(unit: Unit, trace) -> list[UnitState]:
    horizon = len(unit.baseline)
    ev = _check_trace(trace, horizon)
    path = []
    for t in range(horizon):
        if ev is None or t < ev.period:
            path.append(UnitState("performing"))
        elif ev.kind == PREPAY:
            path.append(UnitState("prepaid", ev.period))
        else:
            due = min(ev.period + unit.recovery_lag, horizon - 1)
            pending = (due, recovery_amount(unit)) if t < due else None
            path.append(UnitState("defaulted", ev.period, pending))
    return path


def aggregate_inflows(unit_flows) -> list[Money]:
    """Column sums of a unit x period matrix."""
    rows = [list(r) for r in unit_flows]
    if not rows:
        raise RaggedInput("no units to aggregate")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise RaggedInput("every unit must report the same number of periods")
    return [sum(col) for col in zip(*rows)]


def build_scenario(pool: PoolSpec, scenario: int, events: Mapping[str, Optional[Event]],
                   weight: Optional[Fraction] = None, cache: Optional[dict] = None) -> InflowScenario:
    """Assemble one scenario from per-unit events.

    ``cache`` may be shared across calls on the same pool; per-unit flows only
    depend on the unit and its event, so they are computed once per pair.
    """
    cache = {} if cache is None else cache
    key = tuple(events.get(u.id) for u in pool.units)
    built = cache.get(key)
    if built is None:
        flows, unit_loss = {}, []
        for u, ev in zip(pool.units, key):
            hit = cache.get((u.id, ev))
            if hit is None:
                hit = cache[(u.id, ev)] = (tuple(unit_cashflow(u, ev)), tuple(unit_losses(u, ev)))
            flows[u.id] = hit[0]
            unit_loss.append(hit[1])
        if pool.units:
            inflows, losses = aggregate_inflows(flows.values()), aggregate_inflows(unit_loss)
        else:
            inflows = losses = [0] * pool.horizon
        built = cache[key] = (flows, tuple(inflows), tuple(losses))
    flows, inflows, losses = built
    return InflowScenario(
        scenario=scenario,
        events=dict(zip((u.id for u in pool.units), key)),
        unit_flows=flows,
        inflows=inflows,
        losses=losses,
        weight=weight,
    )


# ---------------------------------------------------------------- sampling


def _hazard_table(pool: PoolSpec, kind: str) -> np.ndarray:
    return np.array(
        [[u.hazard(kind, t) for t in range(pool.horizon)] for u in pool.units], dtype=np.float64
    ).reshape(len(pool.units), pool.horizon) / BPS


def _sample_events(pool: PoolSpec, seed: int, ids: np.ndarray) -> np.ndarray:
    """Event codes per (scenario, unit, period): 0 none, 1 default, 2 prepay."""
    n_units, T = len(pool.units), pool.horizon
    hd = _hazard_table(pool, DEFAULT)[None]
    hp = _hazard_table(pool, PREPAY)[None]
    block = rng.blocks(seed, ids, np.arange(n_units), np.arange(T), _EVENT_STREAM)
    if pool.dependence == "independent":
        u = rng.to_unit_interval(block[..., 0])
        default = u < hd
        prepay = ~default & (u < hd + hp)
    else:
        rho = float(pool.correlation)
        common = rng.blocks(seed, ids, [rng.COMMON], np.arange(T), _FACTOR_STREAM)
        m = rng.to_normal(common[..., 0])
        eps = rng.to_normal(block[..., 0])
        latent = math.sqrt(rho) * m + math.sqrt(1.0 - rho) * eps
        with np.errstate(divide="ignore"):
            default = latent < ndtri(hd)
        # conditional on survival, so the marginal prepay probability stays hp
        v = rng.to_unit_interval(block[..., 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(hd < 1.0, hp / (1.0 - hd), 0.0)
        prepay = ~default & (v < cond)
    return np.where(default, 1, np.where(prepay, 2, 0)).astype(np.int8)


def _first_events(pool: PoolSpec, codes: np.ndarray) -> list[dict]:
    out = []
    any_event = codes != 0
    first = np.where(any_event.any(axis=2), any_event.argmax(axis=2), -1)
    for s in range(codes.shape[0]):
        events = {}
        for i, u in enumerate(pool.units):
            t = int(first[s, i])
            if t < 0:
                events[u.id] = None
            else:
                events[u.id] = Event(DEFAULT if codes[s, i, t] == 1 else PREPAY, t)
        out.append(events)
    return out


def sample_scenarios(pool: PoolSpec, seed: int, ids, threads: int = 1) -> list[InflowScenario]:
    """Sample the scenarios with the given ids.

    Every (seed, scenario, unit, period) cell reads its own Philox block, so a
    scenario's content does not depend on which other ids are requested or on
    ``threads``.  Draws are taken in every cell, including after a unit's
    absorbing event, and simply ignored there.
    """
    validate_pool(pool)
    ids = np.asarray(list(ids), dtype=np.uint64)
    if not len(pool.units):
        return [build_scenario(pool, int(i), {}) for i in ids]

    def work(part):
        codes = _sample_events(pool, seed, part)
        cache = {}
        return [build_scenario(pool, int(i), ev, cache=cache) for i, ev in zip(part, _first_events(pool, codes))]

    if threads <= 1 or len(ids) < 2:
        return work(ids)
    size = -(-len(ids) // threads)
    parts = [ids[i:i + size] for i in range(0, len(ids), size)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return [sc for chunk in ex.map(work, parts) for sc in chunk]


def sample_scenario(pool: PoolSpec, seed: int, scenario: int) -> InflowScenario:
    return sample_scenarios(pool, seed, [scenario])[0]


def event_indicators(pool: PoolSpec, seed: int, ids) -> np.ndarray:
    """Raw per-cell event codes, for frequency diagnostics."""
    validate_pool(pool)
    return _sample_events(pool, seed, np.asarray(list(ids), dtype=np.uint64))


# ---------------------------------------------------------------- enumeration


def _unit_outcomes(unit: Unit, horizon: int) -> list[tuple[Optional[Event], Fraction]]:
    outcomes = []
    survive = Fraction(1)
    for t in range(horizon):
        hd = Fraction(unit.hazard(DEFAULT, t), BPS)
        hp = Fraction(unit.hazard(PREPAY, t), BPS)
        if survive * hd:
            outcomes.append((Event(DEFAULT, t), survive * hd))
        if survive * hp:
            outcomes.append((Event(PREPAY, t), survive * hp))
        survive *= 1 - hd - hp
    if survive:
        outcomes.insert(0, (None, survive))
    return outcomes


def enumerate_scenarios(pool: PoolSpec, limit: int = 10**6) -> list[InflowScenario]:
    """All event trajectories with positive probability and their exact weights."""
    validate_pool(pool)
    if pool.dependence != "independent":
        raise UnsupportedDependence("exact enumeration needs independent units")
    per_unit = [_unit_outcomes(u, pool.horizon) for u in pool.units]
    count = math.prod(len(o) for o in per_unit)
    if count > limit:
        raise TooLarge(f"{count} scenarios exceed the enumeration limit of {limit}", count=count)
    out = []
    for s, combo in enumerate(itertools.product(*per_unit)):
        weight = math.prod((w for _, w in combo), start=Fraction(1))
        events = {u.id: ev for u, (ev, _) in zip(pool.units, combo)}
        out.append(build_scenario(pool, s, events, weight))
    return out
