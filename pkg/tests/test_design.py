from dataclasses import replace
from fractions import Fraction

import pytest

from cascade.design import (
    Constraint,
    DesignSpace,
    Objective,
    Parameter,
    apply_parameter,
    evaluate_design,
    scenario_fingerprint,
    search,
)
from cascade.engine import run_scenarios
from cascade.errors import BadDesign, BudgetExceeded, EmptyFeasibleSet
from cascade.inflows import PoolSpec, Unit, sample_scenarios
from cascade.io import example_structure
from cascade.metrics import DiscountCurve, build_report
from cascade.structure import Position, Rule, StructureSpec, Tier, Trigger, validate_spec

from helpers import derived_structure, golden_scenarios, path_scenario

JUNIOR_PV = Objective("junior", "present_value")


def test_identity_point_matches_direct_metrics():
    spec = example_structure()
    ev = evaluate_design(spec, golden_scenarios(), JUNIOR_PV)
    assert ev.report == build_report(run_scenarios(spec, golden_scenarios()))


def test_golden_junior_present_value():
    ev = evaluate_design(example_structure(), golden_scenarios(), JUNIOR_PV, DiscountCurve.flat(3))
    assert ev.objective == 62.5  # (90 + 35) / 2
    assert ev.feasible


def test_bound_violation_is_named():
    bound = Constraint("metric_bound", position="senior", metric="expected_loss", comparator="<=", bound=Fraction(1))
    ev = evaluate_design(example_structure(), golden_scenarios(), JUNIOR_PV, constraints=[bound])
    assert not ev.feasible
    assert ev.violated == ("expected_loss(senior)<=1",)
    assert ev.slacks["expected_loss(senior)<=1"] == -4


def test_quantile_and_total_notional_constraints():
    spec = derived_structure()
    cons = [
        Constraint("total_notional_equals", amount=700),
        Constraint("metric_bound", position="junior", metric="quantile", level=Fraction(9, 10), comparator="<", bound=Fraction(100)),
        Constraint("metric_bound", position="junior", metric="shortfall_prob", comparator="<=", bound=Fraction(1, 2)),
    ]
    ev = evaluate_design(spec, golden_scenarios(), JUNIOR_PV, constraints=cons)
    assert ev.feasible, ev.slacks


def test_apply_parameter_paths():
    base = replace(example_structure(), tiers=(Tier("a", "pro_rata", ("cost", "senior"), (Fraction(1, 2),) * 2),
                                               Tier("b", "sequential", ("junior",))),
                   triggers=(Trigger("late", "period_index", ">=", 2),),
                   rules=(Rule("late", "use_tier_order", ("a", "b")),))
    validate_spec(base)
    s = apply_parameter(base, "positions.senior.notional", 77)
    assert s.position("senior").notional == 77
    s = apply_parameter(base, "triggers.late.threshold", 1)
    assert s.triggers[0].threshold == 1
    s = apply_parameter(base, "tiers.a.weights", ["0.25", "0.75"])
    assert s.tiers[0].weights == (Fraction(1, 4), Fraction(3, 4))
    s = apply_parameter(base, "rules.0.tier_order", ["b", "a"])
    assert s.rules[0].target == ("b", "a")
    for bad in ("positions.ghost.notional", "positions.senior.color", "rules.5.tier_order"):
        with pytest.raises(BadDesign):
            apply_parameter(base, bad, 1)


def senior_space(values, bound=None):
    cons = ()
    if bound is not None:
        cons = (Constraint("metric_bound", position="junior", metric="expected_loss", comparator="<=", bound=bound),)
    return DesignSpace(derived_structure(), (Parameter("positions.senior.notional", tuple(values)),), cons)


def test_one_point_grid():
    res = search(senior_space([400]), JUNIOR_PV, golden_scenarios())
    assert res.best.index == 0 and len(res.points) == 1


def test_thicker_senior_breaks_junior_bound():
    # Scenario B, junior due 30. Senior due 30: junior paid 30,10,15 -> loss 35.
    # Senior due 50: junior paid 25,0,0 -> loss 65.
    scs = [golden_scenarios()[1]]
    res = search(senior_space([300, 500], bound=Fraction(40)), Objective("senior", "present_value"), scs)
    feasible = [p.assignment["positions.senior.notional"] for p in res.points if p.feasible]
    assert feasible == [300]
    assert res.points[0].evaluation.report.positions["junior"].expected_loss == 35
    assert res.points[1].evaluation.report.positions["junior"].expected_loss == 65
    assert res.points[1].evaluation.violated == ("expected_loss(junior)<=40",)


def test_constant_objective_keeps_grid_order():
    space = DesignSpace(derived_structure(), (Parameter("positions.junior.notional", (100, 200, 300)),))
    res = search(space, Objective("cost", "expected_payment_total"), golden_scenarios())
    assert [p.index for p in res.ranked] == [0, 1, 2]
    assert res.best.index == 0


def test_exhaustive_best_dominates_table():
    res = search(senior_space([100, 300, 400, 600, 800]), Objective("senior", "present_value"), golden_scenarios())
    best = res.best.objective
    assert all(best >= p.objective for p in res.points if p.feasible)


def test_random_search_reproducible():
    space = senior_space(range(100, 900, 50))
    a = search(space, JUNIOR_PV, golden_scenarios(), "random", k=6, seed=3)
    b = search(space, JUNIOR_PV, golden_scenarios(), "random", k=6, seed=3)
    assert [p.assignment for p in a.points] == [p.assignment for p in b.points]
    assert [p.objective for p in a.points] == [p.objective for p in b.points]


def test_budget_and_empty_feasible_set():
    with pytest.raises(BudgetExceeded):
        search(senior_space(range(10)), JUNIOR_PV, golden_scenarios(), budget=5)
    with pytest.raises(EmptyFeasibleSet) as info:
        search(senior_space([300, 500], bound=Fraction(0)), JUNIOR_PV, [golden_scenarios()[1]])
    assert info.value.nearest.assignment == {"positions.senior.notional": 300}


def test_invalid_points_are_recorded():
    space = senior_space([-5, 400])
    res = search(space, JUNIOR_PV, golden_scenarios())
    assert res.points[0].error == "ValidationError" and not res.points[0].feasible
    assert res.best.index == 1


def test_common_random_numbers():
    pool = PoolSpec((Unit("a", (60, 60, 60), 100, default_hazard=1500),
                     Unit("b", (30, 30, 30), 50, default_hazard=500)), 3)
    scs = sample_scenarios(pool, 9, range(200))
    before = scenario_fingerprint(scs)
    res = search(senior_space([200, 400, 600]), JUNIOR_PV, scs)
    fps = {p.evaluation.fingerprint for p in res.points}
    assert fps == {before} == {res.fingerprint}
    # identical specs at two grid points give identical outputs
    twin = search(senior_space([400, 400]), JUNIOR_PV, scs)
    assert twin.points[0].evaluation.report == twin.points[1].evaluation.report
