from dataclasses import replace

from cascade.inflows import InflowScenario
from cascade.io import example_structure
from cascade.structure import ContractParams, Position, StructureSpec, Tier, validate_spec

SCENARIO_A = (80, 80, 80)
SCENARIO_B = (80, 30, 50)


def path_scenario(i, inflows, losses=None, weight=None):
    return InflowScenario(i, {}, {}, tuple(inflows), tuple(losses or [0] * len(inflows)), weight)


def golden_scenarios():
    return [path_scenario(0, SCENARIO_A), path_scenario(1, SCENARIO_B)]


def derived_structure(senior=400, junior=300, rate=1000):
    """Same shape as the example but with note dues derived from notional."""
    base = example_structure()
    return validate_spec(replace(base, positions=(
        base.positions[0],
        Position("senior", "note", senior, 2, params=ContractParams(rate_bps=rate)),
        Position("junior", "note", junior, 3, params=ContractParams(rate_bps=rate)),
    )))


def amortizing_structure(senior, junior, horizon=4):
    return validate_spec(StructureSpec(
        name="amortizing", horizon=horizon,
        positions=(
            Position("fees", "cost", 0, 1, due_schedule={t: 2 for t in range(horizon)}),
            Position("senior", "note", senior, 2, horizon - 1, ContractParams(rate_bps=300, amortizing=True)),
            Position("junior", "note", junior, 3, horizon - 1, ContractParams(rate_bps=800, amortizing=True)),
            Position("equity", "residual", 0, 4),
        ),
        tiers=(Tier("fees", "sequential", ("fees",)), Tier("notes", "sequential", ("senior", "junior")),
               Tier("equity", "sequential", ("equity",))),
    ))
