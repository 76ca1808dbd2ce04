"""File formats: structure and pool JSON, CSV paths and tables, run manifests.

The JSON readers are closed-world: unknown fields, floats where integers are
expected and duplicate keys are all rejected with the offending path.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import tempfile
import time
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .design import Constraint, DesignSpace, Objective, Parameter
from .engine import PaymentMatrix, PeriodAllocation
from .errors import BadCurve, SchemaError, SpecSyntaxError
from .inflows import PoolSpec, Unit, validate_pool
from .metrics import DiscountCurve, MetricReport
from .money import format_decimal, format_rational, parse_rational, to_major
from .structure import (
    ContractParams,
    Position,
    Rule,
    StructureSpec,
    Tier,
    Trigger,
    validate_spec,
)

_INT = re.compile(r"-?\d+\Z")


# ---------------------------------------------------------------- strict JSON


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise SchemaError(k, "duplicate key")
        out[k] = v
    return out


def load_json(text: str) -> Any:
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(exc.msg, exc.lineno, exc.colno) from None


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _fields(node, path: str, required: tuple, optional: tuple = ()) -> dict:
    if not isinstance(node, dict):
        raise SchemaError(path or "$", "expected an object")
    for key in node:
        if key not in required and key not in optional:
            raise SchemaError(_join(path, key), f"unknown field {key!r}")
    for key in required:
        if key not in node:
            raise SchemaError(_join(path, key), "missing required field")
    return node


def _int(node, path: str, minimum: Optional[int] = None) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        raise SchemaError(path, f"expected an integer, got {node!r}")
    if minimum is not None and node < minimum:
        raise SchemaError(path, f"must be >= {minimum}")
    return node


def _str(node, path: str) -> str:
    if not isinstance(node, str):
        raise SchemaError(path, f"expected a string, got {node!r}")
    return node


def _bool(node, path: str) -> bool:
    if not isinstance(node, bool):
        raise SchemaError(path, f"expected true or false, got {node!r}")
    return node


def _list(node, path: str) -> list:
    if not isinstance(node, list):
        raise SchemaError(path, "expected a list")
    return node


def _opt_int(node, path: str):
    return None if node is None else _int(node, path)


def _rational(node, path: str) -> Fraction:
    try:
        return parse_rational(node)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from None


# ---------------------------------------------------------------- structures


def _position(node, path: str) -> Position:
    _fields(node, path, ("name", "kind", "notional", "priority_rank"),
            ("maturity", "contract_params", "due_schedule"))
    params = ContractParams()
    if node.get("contract_params") is not None:
        cp = _fields(node["contract_params"], _join(path, "contract_params"), (),
                     ("rate_bps", "cap", "cumulative_dues", "amortizing"))
        cpath = _join(path, "contract_params")
        params = ContractParams(
            rate_bps=_int(cp.get("rate_bps", 0), _join(cpath, "rate_bps")),
            cap=_opt_int(cp.get("cap"), _join(cpath, "cap")),
            cumulative_dues=_bool(cp.get("cumulative_dues", False), _join(cpath, "cumulative_dues")),
            amortizing=_bool(cp.get("amortizing", False), _join(cpath, "amortizing")),
        )
    schedule = None
    if node.get("due_schedule") is not None:
        spath = _join(path, "due_schedule")
        raw = node["due_schedule"]
        if not isinstance(raw, dict):
            raise SchemaError(spath, "expected an object mapping period to amount")
        schedule = {}
        for key, amount in raw.items():
            if not _INT.match(key):
                raise SchemaError(_join(spath, key), "period keys must be integers")
            schedule[int(key)] = _int(amount, _join(spath, key))
    return Position(
        name=_str(node["name"], _join(path, "name")),
        kind=_str(node["kind"], _join(path, "kind")),
        notional=_int(node["notional"], _join(path, "notional")),
        priority_rank=_int(node["priority_rank"], _join(path, "priority_rank")),
        maturity=_opt_int(node.get("maturity"), _join(path, "maturity")),
        params=params,
        due_schedule=schedule,
    )


def _tier(node, path: str) -> Tier:
    _fields(node, path, ("name", "mode", "members"), ("weights",))
    members = tuple(_str(m, _join(_join(path, "members"), i))
                    for i, m in enumerate(_list(node["members"], _join(path, "members"))))
    weights = None
    if node.get("weights") is not None:
        wpath = _join(path, "weights")
        weights = tuple(_rational(w, _join(wpath, i)) for i, w in enumerate(_list(node["weights"], wpath)))
    return Tier(_str(node["name"], _join(path, "name")), _str(node["mode"], _join(path, "mode")), members, weights)


def _trigger(node, path: str) -> Trigger:
    _fields(node, path, ("name", "metric", "comparator", "threshold"), ("position", "latching"))
    pos = node.get("position")
    return Trigger(
        name=_str(node["name"], _join(path, "name")),
        metric=_str(node["metric"], _join(path, "metric")),
        comparator=_str(node["comparator"], _join(path, "comparator")),
        threshold=_int(node["threshold"], _join(path, "threshold")),
        latching=_bool(node.get("latching", False), _join(path, "latching")),
        position=None if pos is None else _str(pos, _join(path, "position")),
    )


_EFFECT_KEYS = ("use_tier_order", "divert_residual_to", "zero_dues_of")


def _rule(node, path: str) -> Rule:
    _fields(node, path, ("when",), _EFFECT_KEYS)
    effects = [k for k in _EFFECT_KEYS if k in node]
    if len(effects) != 1:
        raise SchemaError(path, f"a rule needs exactly one of {', '.join(_EFFECT_KEYS)}")
    effect = effects[0]
    epath = _join(path, effect)
    if effect == "use_tier_order":
        target = tuple(_str(t, _join(epath, i)) for i, t in enumerate(_list(node[effect], epath)))
    else:
        target = _str(node[effect], epath)
    return Rule(_str(node["when"], _join(path, "when")), effect, target)


def structure_from_dict(doc) -> StructureSpec:
    _fields(doc, "", ("name", "horizon", "positions", "tiers"), ("triggers", "rules", "initial_residual"))
    return StructureSpec(
        name=_str(doc["name"], "name"),
        horizon=_int(doc["horizon"], "horizon"),
        positions=tuple(_position(p, _join("positions", i)) for i, p in enumerate(_list(doc["positions"], "positions"))),
        tiers=tuple(_tier(t, _join("tiers", i)) for i, t in enumerate(_list(doc["tiers"], "tiers"))),
        triggers=tuple(_trigger(t, _join("triggers", i)) for i, t in enumerate(_list(doc.get("triggers", []), "triggers"))),
        rules=tuple(_rule(r, _join("rules", i)) for i, r in enumerate(_list(doc.get("rules", []), "rules"))),
        initial_residual=_int(doc.get("initial_residual", 0), "initial_residual"),
    )


def parse_structure(text: str) -> StructureSpec:
    """Strictly parse and validate a structure document."""
    return validate_spec(structure_from_dict(load_json(text)))


def structure_to_dict(spec: StructureSpec) -> dict:
    def position(p: Position) -> dict:
        return {
            "name": p.name,
            "kind": p.kind,
            "notional": p.notional,
            "priority_rank": p.priority_rank,
            "maturity": p.maturity,
            "contract_params": {
                "rate_bps": p.params.rate_bps,
                "cap": p.params.cap,
                "cumulative_dues": p.params.cumulative_dues,
                "amortizing": p.params.amortizing,
            },
            "due_schedule": None if p.due_schedule is None
            else {str(t): p.due_schedule[t] for t in sorted(p.due_schedule)},
        }

    def tier(t: Tier) -> dict:
        return {
            "name": t.name,
            "mode": t.mode,
            "members": list(t.members),
            "weights": None if t.weights is None else [format_rational(w) for w in t.weights],
        }

    def trigger(t: Trigger) -> dict:
        return {
            "name": t.name,
            "metric": t.metric,
            "position": t.position,
            "comparator": t.comparator,
            "threshold": t.threshold,
            "latching": t.latching,
        }

    def rule(r: Rule) -> dict:
        target = list(r.target) if r.effect == "use_tier_order" else r.target
        return {"when": r.when, r.effect: target}

    return {
        "name": spec.name,
        "horizon": spec.horizon,
        "initial_residual": spec.initial_residual,
        "positions": [position(p) for p in spec.positions],
        "tiers": [tier(t) for t in spec.tiers],
        "triggers": [trigger(t) for t in spec.triggers],
        "rules": [rule(r) for r in spec.rules],
    }


def serialize_structure(spec: StructureSpec) -> str:
    return json.dumps(structure_to_dict(spec), indent=2) + "\n"


def example_structure() -> StructureSpec:
    """Three positions (cost, senior, junior) paid sequentially over three periods."""
    flat = lambda amount: {0: amount, 1: amount, 2: amount}  # noqa: E731
    return StructureSpec(
        name="three-position-sequential",
        horizon=3,
        positions=(
            Position("cost", "cost", 0, 1, due_schedule=flat(5)),
            Position("senior", "note", 0, 2, due_schedule=flat(40)),
            Position("junior", "note", 0, 3, due_schedule=flat(30)),
        ),
        tiers=(Tier("waterfall", "sequential", ("cost", "senior", "junior")),),
        initial_residual=0,
    )


# ---------------------------------------------------------------- pools


def _hazard(node, path: str):
    if isinstance(node, list):
        return tuple(_int(h, _join(path, i)) for i, h in enumerate(node))
    return _int(node, path)


def pool_from_dict(doc) -> PoolSpec:
    _fields(doc, "", ("horizon", "units"), ("dependence", "correlation"))
    dependence = _str(doc.get("dependence", "independent"), "dependence")
    correlation = None
    if doc.get("correlation") is not None:
        correlation = float(_rational(doc["correlation"], "correlation"))
    units = []
    for i, u in enumerate(_list(doc["units"], "units")):
        path = _join("units", i)
        _fields(u, path, ("id", "baseline"),
                ("outstanding_principal", "default_hazard", "prepay_hazard", "recovery_rate", "recovery_lag"))
        bpath = _join(path, "baseline")
        units.append(Unit(
            id=_str(u["id"], _join(path, "id")),
            baseline=tuple(_int(x, _join(bpath, j)) for j, x in enumerate(_list(u["baseline"], bpath))),
            outstanding_principal=_int(u.get("outstanding_principal", 0), _join(path, "outstanding_principal")),
            default_hazard=_hazard(u.get("default_hazard", 0), _join(path, "default_hazard")),
            prepay_hazard=_hazard(u.get("prepay_hazard", 0), _join(path, "prepay_hazard")),
            recovery_rate=_int(u.get("recovery_rate", 0), _join(path, "recovery_rate")),
            recovery_lag=_int(u.get("recovery_lag", 0), _join(path, "recovery_lag")),
        ))
    return PoolSpec(tuple(units), _int(doc["horizon"], "horizon"), dependence, correlation)


def parse_pool(text: str) -> PoolSpec:
    return validate_pool(pool_from_dict(load_json(text)))


def pool_to_dict(pool: PoolSpec) -> dict:
    def hz(h):
        return h if isinstance(h, int) else list(h)

    doc = {
        "horizon": pool.horizon,
        "dependence": pool.dependence,
        "units": [
            {
                "id": u.id,
                "baseline": list(u.baseline),
                "outstanding_principal": u.outstanding_principal,
                "default_hazard": hz(u.default_hazard),
                "prepay_hazard": hz(u.prepay_hazard),
                "recovery_rate": u.recovery_rate,
                "recovery_lag": u.recovery_lag,
            }
            for u in pool.units
        ],
    }
    if pool.correlation is not None:
        doc["correlation"] = repr(pool.correlation)
    return doc


# ---------------------------------------------------------------- design files


def space_from_dict(doc, base: StructureSpec) -> tuple[DesignSpace, Optional[int]]:
    _fields(doc, "", ("parameters",), ("constraints", "budget"))
    params = []
    for i, p in enumerate(_list(doc["parameters"], "parameters")):
        path = _join("parameters", i)
        _fields(p, path, ("path", "values"))
        params.append(Parameter(_str(p["path"], _join(path, "path")),
                                tuple(_list(p["values"], _join(path, "values")))))
    constraints = []
    for i, c in enumerate(_list(doc.get("constraints", []), "constraints")):
        path = _join("constraints", i)
        _fields(c, path, (), ("total_notional_equals", "metric_bound"))
        if len(c) != 1:
            raise SchemaError(path, "a constraint needs exactly one of total_notional_equals, metric_bound")
        if "total_notional_equals" in c:
            constraints.append(Constraint("total_notional_equals",
                                          amount=_int(c["total_notional_equals"], _join(path, "total_notional_equals"))))
            continue
        mpath = _join(path, "metric_bound")
        mb = _fields(c["metric_bound"], mpath, ("position", "metric", "comparator", "bound"), ("level",))
        metric = _str(mb["metric"], _join(mpath, "metric"))
        if metric not in ("expected_loss", "shortfall_prob", "quantile"):
            raise SchemaError(_join(mpath, "metric"), f"unknown metric {metric!r}")
        comparator = _str(mb["comparator"], _join(mpath, "comparator"))
        if comparator not in ("<", "<=", ">", ">="):
            raise SchemaError(_join(mpath, "comparator"), f"unknown comparator {comparator!r}")
        level = None
        if metric == "quantile":
            if "level" not in mb:
                raise SchemaError(_join(mpath, "level"), "quantile bounds need a level")
            level = _rational(mb["level"], _join(mpath, "level"))
        constraints.append(Constraint(
            "metric_bound",
            position=_str(mb["position"], _join(mpath, "position")),
            metric=metric,
            level=level,
            comparator=comparator,
            bound=_rational(mb["bound"], _join(mpath, "bound")),
        ))
    budget = None if doc.get("budget") is None else _int(doc["budget"], "budget", 1)
    return DesignSpace(base, tuple(params), tuple(constraints)), budget


def objective_from_dict(doc) -> Objective:
    _fields(doc, "", ("position",), ("metric",))
    return Objective(_str(doc["position"], "position"), _str(doc.get("metric", "present_value"), "metric"))


# ---------------------------------------------------------------- CSV


def _csv_rows(text: str, header: tuple, optional: tuple = ()) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    got = tuple(reader.fieldnames or ())
    if got[:len(header)] != header or any(f not in optional for f in got[len(header):]):
        raise SchemaError("header", f"expected columns {','.join(header + optional)}, got {','.join(got)}")
    return list(reader)


def _cell_int(row: dict, col: str, line: int) -> int:
    raw = (row.get(col) or "").strip()
    if not _INT.match(raw):
        raise SchemaError(f"row {line}.{col}", f"expected an integer, got {raw!r}")
    return int(raw)


def parse_inflows(text: str) -> tuple[list[int], Optional[list[int]]]:
    """``period,amount[,pool_loss]`` rows, periods 0..T-1 in order."""
    rows = _csv_rows(text, ("period", "amount"), ("pool_loss",))
    inflows, losses = [], []
    has_loss = bool(rows) and "pool_loss" in rows[0]
    for i, row in enumerate(rows):
        if _cell_int(row, "period", i + 2) != i:
            raise SchemaError(f"row {i + 2}.period", f"periods must run 0, 1, ... in order; expected {i}")
        inflows.append(_cell_int(row, "amount", i + 2))
        if has_loss:
            losses.append(_cell_int(row, "pool_loss", i + 2))
    return inflows, (losses if has_loss else None)


PAYMENT_HEADER = ("scenario", "period", "position", "due", "paid", "residual_after")


def format_payments(matrices) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PAYMENT_HEADER)
    for m in matrices:
        for pa in m.periods:
            for p in pa.payments:
                w.writerow((m.scenario, pa.period, p, pa.dues[p], pa.payments[p], pa.residual_after))
    return buf.getvalue()


def parse_payments(text: str) -> list[PaymentMatrix]:
    """Rebuild payment matrices (dues, payments, residuals) from payments.csv."""
    rows = _csv_rows(text, PAYMENT_HEADER)
    grouped: dict[int, dict[int, dict]] = {}
    for i, row in enumerate(rows):
        line = i + 2
        s, t = _cell_int(row, "scenario", line), _cell_int(row, "period", line)
        cell = grouped.setdefault(s, {}).setdefault(t, {"dues": {}, "paid": {}, "residual": None})
        cell["dues"][row["position"]] = _cell_int(row, "due", line)
        cell["paid"][row["position"]] = _cell_int(row, "paid", line)
        cell["residual"] = _cell_int(row, "residual_after", line)
    out = []
    for s, periods in grouped.items():
        allocs = []
        for t in sorted(periods):
            c = periods[t]
            available = sum(c["paid"].values()) + c["residual"]
            allocs.append(PeriodAllocation(t, inflow=available, available=available, payments=c["paid"],
                                           dues=c["dues"], residual_after=c["residual"]))
        out.append(PaymentMatrix(s, tuple(allocs)))
    return out


def format_scenarios(scenarios, weighted: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scenario", "period", "inflow") + (("weight",) if weighted else ()))
    for sc in scenarios:
        for t, f in enumerate(sc.inflows):
            w.writerow((sc.scenario, t, f) + ((format_rational(sc.weight),) if weighted else ()))
    return buf.getvalue()


def parse_scenario_weights(text: str) -> Optional[dict[int, Fraction]]:
    rows = _csv_rows(text, ("scenario", "period", "inflow"), ("weight",))
    if not rows or "weight" not in rows[0]:
        return None
    out = {}
    for i, row in enumerate(rows):
        out[_cell_int(row, "scenario", i + 2)] = _rational(row["weight"], f"row {i + 2}.weight")
    return out


def parse_curve(text: str) -> DiscountCurve:
    rows = _csv_rows(text, ("period", "factor"))
    factors = []
    for i, row in enumerate(rows):
        if _cell_int(row, "period", i + 2) != i:
            raise SchemaError(f"row {i + 2}.period", f"periods must run 0, 1, ... in order; expected {i}")
        try:
            factors.append(float(row["factor"]))
        except (TypeError, ValueError):
            raise BadCurve(f"row {i + 2}: factor {row['factor']!r} is not a number") from None
    return DiscountCurve(tuple(factors))


def report_to_dict(report: MetricReport, exponent: int = 2) -> dict:
    def money(x) -> str:
        return format_decimal(to_major(x, exponent))

    positions = {}
    for name, m in report.positions.items():
        positions[name] = {
            "expected_payments": [money(x) for x in m.expected_payments],
            "present_value": format_decimal(to_major(Fraction(m.present_value), exponent), 10),
            "expected_loss": money(m.expected_loss),
            "shortfall_probability": format_decimal(m.shortfall_probability),
            "quantiles": {format_rational(lv): money(q) for lv, q in m.quantiles.items()},
            "losses": [money(x) for x in m.losses],
        }
    return {"scenario_count": report.scenario_count, "weighted": report.weighted,
            "minor_unit_exponent": exponent, "positions": positions}


def format_report_csv(report: MetricReport, exponent: int = 2) -> str:
    doc = report_to_dict(report, exponent)
    levels = [format_rational(lv) for lv in next(iter(report.positions.values())).quantiles] if report.positions else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["position", "present_value", "expected_loss", "shortfall_probability"] + [f"q{lv}" for lv in levels])
    for name, m in doc["positions"].items():
        w.writerow([name, m["present_value"], m["expected_loss"], m["shortfall_probability"]]
                   + [m["quantiles"][lv] for lv in levels])
    return buf.getvalue()


# ---------------------------------------------------------------- output plumbing


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(command: str, inputs: dict, seed: Optional[int] = None,
                   scenarios: Optional[int] = None, extra: Optional[dict] = None) -> dict:
    doc = {
        "tool": "cascade",
        "version": __version__,
        "command": command,
        "inputs": {k: file_digest(v) for k, v in sorted(inputs.items()) if v is not None},
        "seed": seed,
        "scenarios": scenarios,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        doc.update(extra)
    return doc


def write_manifest(target, manifest: dict) -> Path:
    """Manifest goes inside a directory target, or next to a file target."""
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
