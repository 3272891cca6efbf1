import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmat.milp_solver import (
    LIMIT_REACHED,
    FeasibleStartError,
    SolveOptions,
    enumerate_oracle,
    feasible_start,
    solve,
)
from cmat.model import CmatParameters, MovementDemand, build_m1, build_m2, check_m2_precondition
from cmat.scenarios import build_scenario

from conftest import vph

# Hand-derived optima of the queue-clearing model on one conflict point.
# Cycles are multiples of the arrival headways (3.6k s balanced, 2k s for the
# 1800 veh/h movement); the smallest k whose two platoons plus two crossing
# headways fit the cycle wins because the objective is dominated by 0.9 C.
BALANCED = dict(C=7.2, L=(2, 2), objective=0.9 * 7.2 - 0.1 * 4)
IMBALANCED = dict(C=10.0, L=(5, 1), objective=0.9 * 10 - 0.1 * 6)


def _platoons(sol, g):
    return tuple(int(round(sol[("L", p)])) for p in g.movement_ids)


@pytest.mark.parametrize("backend", ["bnb", "highs"])
def test_balanced_m1_optimum(single, params, backend):
    sol = solve(build_m1(single, vph(single, 1000, 1000), params), SolveOptions(backend=backend))
    assert sol.status == "optimal"
    assert sol[("C",)] == pytest.approx(BALANCED["C"], abs=1e-6)
    assert _platoons(sol, single) == BALANCED["L"]
    assert sol.objective == pytest.approx(BALANCED["objective"], abs=1e-6)
    (n,) = single.nodes
    assert sol[("tau_lo", n)] + sol[("tau_hi", n)] == pytest.approx(4.2, abs=1e-6)


@pytest.mark.parametrize("backend", ["bnb", "highs"])
def test_imbalanced_m1_optimum(single, params, backend):
    sol = solve(build_m1(single, vph(single, 1800, 100), params), SolveOptions(backend=backend))
    assert sol.status == "optimal"
    assert sol[("C",)] == pytest.approx(IMBALANCED["C"], abs=1e-6)
    assert _platoons(sol, single) == IMBALANCED["L"]
    assert sol.objective == pytest.approx(IMBALANCED["objective"], abs=1e-6)


def test_oracle_reproduces_hand_values(single, params):
    a = enumerate_oracle(single, vph(single, 1000, 1000), params, "m1")
    assert a.objective == pytest.approx(6.08, abs=1e-9)
    assert a[("C",)] == pytest.approx(7.2)
    b = enumerate_oracle(single, vph(single, 1800, 100), params, "m1")
    assert b[("C",)] == pytest.approx(10.0)
    assert _platoons(b, single) == (5, 1)


def test_saturated_conflict(single, params):
    d = vph(single, 2880, 2880)
    assert solve(build_m1(single, d, params)).status == "infeasible"
    assert enumerate_oracle(single, d, params, "m1").status == "infeasible"
    sol = solve(build_m2(single, d, params))
    assert sol.status == "optimal"
    # C = 2 tau_c + T1 + T2 = 2 + 1.25 (L1 + L2) <= 120 caps L1 + L2 at 94, and
    # the objective 0.1 C - 0.9 (L1 + L2) then prefers the shortest such cycle
    assert sum(_platoons(sol, single)) == 94
    assert sol[("C",)] == pytest.approx(119.5, abs=1e-6)
    assert sol.objective == pytest.approx(0.1 * 119.5 - 0.9 * 94, abs=1e-6)


def test_solution_is_feasible_and_integral(tee, params):
    inst = build_m1(tee, vph(tee, 900, 720, 360), params)
    sol = solve(inst)
    assert sol.status == "optimal"
    assert inst.violations(sol.x, 1e-6) == []
    mask = inst.integer_mask()
    assert np.all(np.abs(sol.x[mask] - np.round(sol.x[mask])) <= 1e-6)


def test_branch_and_bound_is_deterministic(tee, params):
    inst = build_m2(tee, vph(tee, 2000, 1500, 300), params)
    a, b = solve(inst), solve(inst)
    assert np.array_equal(a.x, b.x)
    assert a.stats.nodes == b.stats.nodes


def test_incumbents_improve_and_bound_closes(tee, params):
    sol = solve(build_m2(tee, vph(tee, 2000, 1500, 300), params))
    inc = sol.stats.incumbents
    assert inc and all(b <= a + 1e-12 for a, b in zip(inc, inc[1:]))
    assert sol.stats.lower_bound >= sol.objective - 1e-6


def test_node_limit_reports_limit(tee, params):
    sol = solve(build_m2(tee, vph(tee, 2000, 1500, 300), params), SolveOptions(node_limit=1))
    assert sol.status in (LIMIT_REACHED, "optimal")
    if sol.status == LIMIT_REACHED and sol.has_solution:
        assert build_m2(tee, vph(tee, 2000, 1500, 300), params).violations(sol.x) == []


def test_infeasible_start_is_ignored(single, params):
    inst = build_m1(single, vph(single, 1000, 1000), params)
    sol = solve(inst, start=np.zeros(inst.n_vars))
    assert sol.objective == pytest.approx(6.08)


def test_highs_backend_keeps_better_start(tee, params):
    inst = build_m2(tee, vph(tee, 2000, 1500, 300), params)
    best = solve(inst)
    sol = solve(inst, SolveOptions(backend="highs", node_limit=1), start=best.x)
    assert sol.objective <= best.objective + 1e-6


def test_unbounded_variables_rejected(single, params):
    inst = build_m1(single, vph(single, 1000, 1000), params)
    inst.variables[0] = type(inst.variables[0])("C", "continuous", 0.0, math.inf)
    with pytest.raises(ValueError):
        solve(inst)


def test_oracle_size_caps(params):
    g = build_scenario("four_leg_dedicated")
    with pytest.raises(ValueError):
        enumerate_oracle(g, {p: 0.2 for p in g.movement_ids}, params, "m1")
    single = build_scenario("single_conflict")
    with pytest.raises(ValueError):
        enumerate_oracle(single, vph(single, 2000, 2000), params, "m2")


def test_feasible_start_example(single, params):
    d = vph(single, 1000, 1000)
    roles = feasible_start(single, d, CmatParameters(tau_star=3.0))
    (n,) = single.nodes
    assert roles[("C",)] == pytest.approx(4.5)
    assert roles[("tau_lo", n)] == pytest.approx(2.0)
    assert roles[("tau_hi", n)] == pytest.approx(2.0)


def test_feasible_start_requires_precondition(single, params):
    with pytest.raises(FeasibleStartError):
        feasible_start(single, vph(single, 1000, 1000), params)


@st.composite
def precondition_instances(draw):
    """Demands with at least one slow movement, so the relaxed model's
    feasibility condition holds under the default parameters."""
    kind = draw(st.sampled_from(["single_conflict", "t_intersection", "four_leg_shared", "connected_pair"]))
    g = build_scenario(kind)
    ids = g.movement_ids
    flows = {p: draw(st.floats(30.0, 2880.0)) for p in ids}
    slow = draw(st.sampled_from(ids))
    flows[slow] = draw(st.floats(30.0, 320.0))  # 1/q >= 11.25 s = tau_star + 1/q_max
    return g, MovementDemand.from_vph(flows)


@settings(max_examples=100)
@given(precondition_instances())
def test_feasible_start_satisfies_relaxed_model(case):
    g, d = case
    params = CmatParameters()
    assert check_m2_precondition(d, params)
    roles = feasible_start(g, d, params)
    inst = build_m2(g, d, params)
    assert set(roles) == set(inst.roles)
    assert inst.violations(inst.assignment(roles), 1e-6) == []
    assert roles[("C",)] <= params.c_max
    for n, p1, p2 in g.node_pairs():
        assert roles[("tau_lo", n)] >= params.flow.tau_c - 1e-9
