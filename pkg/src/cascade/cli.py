"""Command-line entry point for the cascade tools.

Exit codes: 0 success, 1 domain error (JSON on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
from pathlib import Path

from . import io
from .design import search
from .engine import run_scenarios, run_waterfall, thread_count
from .errors import CascadeError, EmptyFeasibleSet, LengthMismatch
from .inflows import enumerate_scenarios, sample_scenarios
from .metrics import DiscountCurve, build_report
from .money import format_decimal


def _read(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_pair(args):
    spec = io.parse_structure(_read(args.structure))
    pool = io.parse_pool(_read(args.pool))
    if pool.horizon != spec.horizon:
        raise LengthMismatch(f"pool horizon {pool.horizon} differs from structure horizon {spec.horizon}",
                             expected=spec.horizon, got=pool.horizon)
    return spec, pool


def cmd_example(args) -> int:
    text = io.serialize_structure(io.example_structure())
    if args.out:
        io.write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate(args) -> int:
    spec = io.parse_structure(_read(args.file))
    print(json.dumps({"valid": True, "name": spec.name, "horizon": spec.horizon,
                      "positions": len(spec.positions), "tiers": len(spec.tiers)}))
    return 0


def cmd_run(args) -> int:
    spec = io.parse_structure(_read(args.structure))
    inflows, losses = io.parse_inflows(_read(args.inflows))
    matrix = run_waterfall(spec, inflows, losses)
    io.write_atomic(args.out, io.format_payments([matrix]))
    io.write_manifest(args.out, io.build_manifest(
        "run", {"structure": args.structure, "inflows": args.inflows}, scenarios=1))
    return 0


def _write_scenario_dir(out, spec, scenarios, weighted, threads, manifest):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    matrices = run_scenarios(spec, scenarios, threads)
    io.write_atomic(out / "payments.csv", io.format_payments(matrices))
    io.write_atomic(out / "scenarios.csv", io.format_scenarios(scenarios, weighted))
    io.write_manifest(out, manifest)


def cmd_simulate(args) -> int:
    spec, pool = _load_pair(args)
    threads = args.threads or thread_count()
    scenarios = sample_scenarios(pool, args.seed, range(args.scenarios), threads)
    manifest = io.build_manifest("simulate", {"structure": args.structure, "pool": args.pool},
                                 seed=args.seed, scenarios=args.scenarios)
    _write_scenario_dir(args.out, spec, scenarios, False, threads, manifest)
    return 0


def cmd_enumerate(args) -> int:
    spec, pool = _load_pair(args)
    scenarios = enumerate_scenarios(pool, args.limit)
    manifest = io.build_manifest("enumerate", {"structure": args.structure, "pool": args.pool},
                                 scenarios=len(scenarios))
    _write_scenario_dir(args.out, spec, scenarios, True, args.threads or thread_count(), manifest)
    return 0


def cmd_metrics(args) -> int:
    src = Path(args.payments)
    matrices = io.parse_payments(_read(src / "payments.csv"))
    weights = None
    if (src / "scenarios.csv").exists():
        table = io.parse_scenario_weights(_read(src / "scenarios.csv"))
        if table is not None:
            weights = [table[m.scenario] for m in matrices]
    horizon = len(matrices[0].periods) if matrices else 0
    curve = io.parse_curve(_read(args.discount)) if args.discount else DiscountCurve.flat(horizon)
    levels = [s for s in args.quantiles.split(",") if s.strip()] if args.quantiles else []
    report = build_report(matrices, weights, curve, levels)
    if args.format == "csv":
        text = io.format_report_csv(report, args.exponent)
    else:
        text = json.dumps(io.report_to_dict(report, args.exponent), indent=2) + "\n"
    if args.out:
        io.write_atomic(args.out, text)
        io.write_manifest(args.out, io.build_manifest(
            "metrics", {"payments": src / "payments.csv", "discount": args.discount},
            scenarios=len(matrices)))
    else:
        sys.stdout.write(text)
    return 0


def _cell(value) -> str:
    if isinstance(value, (list, tuple)):
        return "|".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    try:
        return format_decimal(value) if not isinstance(value, int) else str(value)
    except (TypeError, ValueError):
        return str(value)


def format_sweep(result, space) -> str:
    labels = [c.label for c in space.constraints]
    paths = [p.path for p in space.parameters]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point"] + paths + ["objective", "feasible", "error", "violated"] + [f"slack:{lb}" for lb in labels])
    for pt in result.points:
        ev = pt.evaluation
        row = [pt.index] + [_cell(pt.assignment[p]) for p in paths]
        if ev is None:
            row += ["", "false", pt.error or "", ""] + [""] * len(labels)
        else:
            row += [_cell(ev.objective), "true" if ev.feasible else "false", "", "|".join(ev.violated)]
            row += [_cell(ev.slacks[lb]) for lb in labels]
        w.writerow(row)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    spec, pool = _load_pair(args)
    space, budget = io.space_from_dict(io.load_json(_read(args.space)), spec)
    objective = io.objective_from_dict(io.load_json(_read(args.objective)))
    threads = args.threads or thread_count()
    scenarios = sample_scenarios(pool, args.seed, range(args.scenarios), threads)
    curve = io.parse_curve(_read(args.discount)) if args.discount else None
    kwargs = dict(budget=budget or 10_000, curve=curve, threads=threads)
    if args.mode == "random":
        kwargs.update(k=args.k, seed=args.search_seed if args.search_seed is not None else args.seed)
    status = 0
    try:
        result = search(space, objective, scenarios, args.mode, **kwargs)
    except EmptyFeasibleSet as exc:
        result = exc.result
        status = exc
    io.write_atomic(args.out, format_sweep(result, space))
    io.write_manifest(args.out, io.build_manifest(
        "sweep", {"structure": args.structure, "pool": args.pool, "space": args.space,
                  "objective": args.objective, "discount": args.discount},
        seed=args.seed, scenarios=args.scenarios,
        extra={"best_point": result.best.index if result.best else None,
               "scenario_fingerprint": result.fingerprint}))
    if status:
        raise status
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cascade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("example", help="emit the three-position example structure")
    p.add_argument("--out")
    p.set_defaults(func=cmd_example)

    p = sub.add_parser("validate", help="parse and validate a structure file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one deterministic inflow path")
    p.add_argument("--structure", required=True)
    p.add_argument("--inflows", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    for name, func in (("simulate", cmd_simulate), ("enumerate", cmd_enumerate)):
        p = sub.add_parser(name, help=f"{name} pool scenarios and run the waterfall on each")
        p.add_argument("--structure", required=True)
        p.add_argument("--pool", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int)
        if name == "simulate":
            p.add_argument("--scenarios", type=int, required=True)
            p.add_argument("--seed", type=int, required=True)
        else:
            p.add_argument("--limit", type=int, default=10**6)
        p.set_defaults(func=func)

    p = sub.add_parser("metrics", help="risk and valuation report from a payments directory")
    p.add_argument("--payments", required=True)
    p.add_argument("--discount")
    p.add_argument("--quantiles", default="")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--exponent", type=int, default=2, help="minor-unit exponent for major-unit output")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sweep", help="grid or random search over structural parameters")
    p.add_argument("--structure", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scenarios", type=int, required=True)
    p.add_argument("--space", required=True)
    p.add_argument("--objective", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--discount")
    p.add_argument("--mode", choices=("exhaustive_grid", "random"), default="exhaustive_grid")
    p.add_argument("--k", type=int)
    p.add_argument("--search-seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "scenarios", None) is not None and args.scenarios < 1:
        parser.error("--scenarios must be >= 1")
    if getattr(args, "mode", None) == "random" and args.k is None:
        parser.error("--mode random needs --k")
    try:
        return args.func(args)
    except CascadeError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "FileError", "message": str(exc)}) + "\n")
        return 1
