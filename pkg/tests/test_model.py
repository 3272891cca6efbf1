import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmat.analytics import FlowParameters
from cmat.lpfile import LpFormatError, read_lp, read_solution, write_lp
from cmat.milp_solver import solve
from cmat.model import (
    BINARY,
    CmatParameters,
    MovementDemand,
    build_m1,
    build_m2,
    build_model,
    check_m2_precondition,
    muted_set,
    variable_bounds,
)
from cmat.scenarios import build_scenario

from conftest import vph


def test_mute_rule(params):
    d = MovementDemand.from_vph({"a": 100, "b": 1000, "c": 360})
    assert muted_set(d, params) == {"a"}  # 36 s > 10 s; 3.6 s and exactly 10 s are not muted


def test_q_max_and_platoon_cap(params):
    assert params.q_max == pytest.approx(0.8)
    assert params.l_max == 96


def test_variable_bounds(single, params):
    vb = variable_bounds(single, params)
    (n,) = single.nodes
    for p in single.movement_ids:
        assert vb.T_lb[p] == pytest.approx(0.25)
        assert vb.T_ub[p] == pytest.approx(119.0)
        assert vb.t_arr_lb[(p, n)] == 0.0
        assert vb.t_arr_ub[(p, n)] == pytest.approx(238.75)


@pytest.mark.parametrize(
    "c_max, tau_star, flows, ok",
    [
        (120.0, 10.0, [72, 3000], True),  # max 1/q = 50 s, 10 <= 48.75
        (3.0, 1.0, [1000, 1000], False),  # 3 < 4.5
        (120.0, 60.0, [72, 1000], False),  # 60 > 48.75
    ],
)
def test_m2_precondition(c_max, tau_star, flows, ok):
    params = CmatParameters(tau_star=tau_star, c_max=c_max)
    d = MovementDemand.from_vph(dict(zip("ab", flows)))
    res = check_m2_precondition(d, params)
    assert bool(res) is ok
    if not ok:
        assert res.reason


@pytest.mark.parametrize("kind", ["single_conflict", "t_intersection", "four_leg_shared", "connected_pair"])
@pytest.mark.parametrize("model", ["m1", "m2"])
def test_role_index_is_total(kind, model, params):
    g = build_scenario(kind)
    inst = build_model(g, {p: 0.2 for p in g.movement_ids}, params, model)
    expected = {("C",)}
    for p in g.movements:
        expected |= {(k, p.id) for k in ("r", "g", "L", "t_off", "T")}
        expected |= {("t_arr", p.id, n) for n in p.nodes}
    for n in g.nodes:
        expected |= {(k, n) for k in ("tau_lo", "tau_hi", "z", "x_lo", "x_hi", "y_lo", "y_hi")}
    assert set(inst.roles) == expected
    assert sorted(inst.roles.values()) == list(range(inst.n_vars))
    for role, i in inst.roles.items():
        v = inst.variables[i]
        if role[0] == "z":
            assert v.kind == BINARY and (v.lb, v.ub) == (0.0, 1.0)
        if role[0] == "L":
            assert (v.lb, v.ub) == (1.0, 96.0)
    for con in inst.constraints:
        assert all(0 <= i < inst.n_vars for i, _ in con.coefs)


def test_muted_platoon_fixed_by_bounds(single, params):
    inst = build_m1(single, vph(single, 1800, 100), params)
    eb, nb = single.movement_ids
    assert (inst.variables[inst[("L", nb)]].lb, inst.variables[inst[("L", nb)]].ub) == (1.0, 1.0)
    assert inst.variables[inst[("L", eb)]].ub == 96.0


def test_objective_weights(single, params):
    d = vph(single, 1000, 1000)
    m1, m2 = build_m1(single, d, params), build_m2(single, d, params)
    p = single.movement_ids[0]
    assert m1.objective[m1[("C",)]] == pytest.approx(0.9)
    assert m1.objective[m1[("L", p)]] == pytest.approx(-0.1)
    assert m2.objective[m2[("C",)]] == pytest.approx(0.1)
    assert m2.objective[m2[("L", p)]] == pytest.approx(-0.9)


def test_build_is_deterministic(params):
    g = build_scenario("four_leg_dedicated")
    d = {p: 0.25 for p in g.movement_ids}
    a, b = build_m1(g, d, params), build_m1(g, d, params)
    assert a.variables == b.variables
    assert a.constraints == b.constraints
    assert a.objective == b.objective


def test_demand_above_saturation_is_clamped(single, params, caplog):
    with caplog.at_level(logging.WARNING):
        inst = build_m1(single, vph(single, 4000, 1000), params)
    assert "clamped" in caplog.text
    assert inst.meta["demands"][single.movement_ids[0]] == pytest.approx(params.q_max)


def test_missing_demand_rejected(single, params):
    with pytest.raises(ValueError):
        build_m1(single, {single.movement_ids[0]: 0.2}, params)


def test_m1_solution_is_feasible_in_m2(tee, params):
    d = vph(tee, 900, 720, 360)
    sol = solve(build_m1(tee, d, params))
    assert sol.status == "optimal"
    m2 = build_m2(tee, d, params)
    x = m2.assignment(sol.values)
    assert m2.violations(x) == []
    # and without the service cap too
    assert build_m2(tee, d, params, service="none").violations(x) == []


@pytest.mark.parametrize("kind", ["single_conflict", "t_intersection", "connected_pair"])
@pytest.mark.parametrize("model", ["m1", "m2"])
def test_lp_file_round_trip(kind, model, params):
    g = build_scenario(kind)
    inst = build_model(g, {p: 0.21 + 0.01 * k for k, p in enumerate(g.movement_ids)}, params, model)
    text = write_lp(inst)
    back = read_lp(text)
    assert back.variables == inst.variables
    assert back.constraints == inst.constraints
    assert back.objective == inst.objective
    assert back.roles == inst.roles
    assert write_lp(back) == text


@settings(max_examples=30)
@given(flows=st.lists(st.integers(1, 2880), min_size=3, max_size=3), lam=st.floats(0.5, 1.0))
def test_lp_file_round_trip_random(tee, flows, lam):
    params = CmatParameters(lam=lam)
    inst = build_m2(tee, vph(tee, *flows), params)
    back = read_lp(write_lp(inst))
    assert back.constraints == inst.constraints and back.variables == inst.variables


def test_lp_file_sections(single, params):
    text = write_lp(build_m1(single, vph(single, 1000, 1000), params))
    for head in ("Minimize", "Subject To", "Bounds", "General", "Binary", "End"):
        assert f"\n{head}\n" in text


def test_lp_file_rejects_garbage():
    with pytest.raises(LpFormatError):
        read_lp("Minimize\n obj: + 1.0 x0\nSubject To\n c0: + 1.0 x0 ?? 3\nEnd\n")


def test_solution_file_layouts(single, params):
    inst = build_m1(single, vph(single, 1000, 1000), params)
    x = read_solution("Columns\n x0 7.2\n  1 x1 B 3.5 0\nx2 NL -0.5\n", inst)
    assert x[:3].tolist() == [7.2, 3.5, -0.5]
    assert np.all(x[3:] == 0)


def test_flow_parameters_flow_through(single):
    params = CmatParameters(flow=FlowParameters(tau_f=1.5, tau_c=3.0))
    assert params.q_max == pytest.approx(1 / 1.75)
    assert params.l_max == 68
