import dataclasses
import json
import re

import pytest
from hypothesis import given, settings, strategies as st

from cmat.baselines import rc_schedule
from cmat.milp_solver import LIMIT_REACHED, MilpSolution, solve
from cmat.model import CmatParameters, build_m1, build_m2
from cmat.schedule import (
    CyclicSchedule,
    MovementTiming,
    NodeTiming,
    ScheduleFormatError,
    check_prop1,
    extract_schedule,
    headway_from_order,
    inject_headway_fault,
    load_controller,
    occupancy_timeline,
    save_controller,
    schedule_from_dict,
    schedule_invariants,
    schedule_to_dict,
    verify_safety,
)

from conftest import vph


def _m1(g, params, *flows):
    d = vph(g, *flows)
    return extract_schedule(solve(build_m1(g, d, params)), g, params, "M1"), d


@pytest.fixture(scope="module")
def balanced(single, params):
    return _m1(single, params, 1000, 1000)


@pytest.fixture(scope="module")
def tee_schedule(tee, params):
    return _m1(tee, params, 900, 600, 300)[0]


def test_extract_balanced(balanced, single):
    s, _ = balanced
    assert s.C == pytest.approx(7.2, abs=1e-6)
    assert tuple(m.L for m in s.movements.values()) == (2, 2)
    assert [m.T for m in s.movements.values()] == pytest.approx([1.5, 1.5])
    (nt,) = s.nodes.values()
    assert nt.tau_lo + nt.tau_hi == pytest.approx(4.2, abs=1e-6)
    assert schedule_invariants(s, single) == []


def test_extract_imbalanced(single, params):
    s, _ = _m1(single, params, 1800, 100)
    assert s.C == pytest.approx(10.0, abs=1e-6)
    assert tuple(s.movements[p].L for p in single.movement_ids) == (5, 1)
    assert [s.movements[p].T for p in single.movement_ids] == pytest.approx([5.25, 0.25])
    (nt,) = s.nodes.values()
    assert nt.tau_lo + nt.tau_hi == pytest.approx(4.5, abs=1e-6)


def test_extract_unit_platoons(single, params):
    s = rc_schedule(single, params)
    assert s.C == pytest.approx(4.5, abs=1e-6)
    assert [m.T for m in s.movements.values()] == pytest.approx([0.25, 0.25])


def test_extract_rejects_non_optimal(single, params):
    with pytest.raises(ValueError, match="infeasible"):
        extract_schedule(MilpSolution("infeasible"), single, params)
    with pytest.raises(ValueError):
        extract_schedule(MilpSolution(LIMIT_REACHED), single, params)


def test_extract_rounds_integers(single, params, balanced):
    inst = build_m1(single, vph(single, 1000, 1000), params)
    sol = solve(inst)
    for p in single.movement_ids:
        sol.values[("L", p)] += 4e-7
    s = extract_schedule(sol, single, params)
    assert all(isinstance(m.L, int) and m.L == 2 for m in s.movements.values())


@pytest.mark.parametrize("k", [3, 5, 10])
def test_optimal_schedules_are_safe(balanced, tee_schedule, single, tee, k):
    assert verify_safety(balanced[0], single, k).ok
    assert verify_safety(tee_schedule, tee, k).ok


def test_safety_report_independent_of_horizon(tee_schedule, tee):
    assert verify_safety(tee_schedule, tee, 3).violations == verify_safety(tee_schedule, tee, 10).violations == []


def test_k_cycles_lower_bound(balanced, single):
    with pytest.raises(ValueError):
        verify_safety(balanced[0], single, 2)


@pytest.mark.parametrize("k", [3, 5, 8])
def test_reduced_headway_flagged_every_cycle(balanced, single, params, k):
    s, _ = balanced
    (n,) = s.nodes
    bad = inject_headway_fault(s, n, params.flow.tau_c / 2)
    report = verify_safety(bad, single, k)
    gaps = [v for v in report.at(n) if v.kind == "gap"]
    assert sorted({v.cycle for v in gaps}) == list(range(k))
    assert any(f"gap {params.flow.tau_c / 2:g}" in v.detail for v in gaps)


def test_fault_injection_both_directions(tee_schedule, tee, params):
    """Safety is empty exactly when every headway invariant holds."""
    tau_c = params.flow.tau_c
    for n in tee_schedule.nodes:
        for tau in (tau_c - 0.01, tau_c, tau_c + 0.5):
            s = inject_headway_fault(tee_schedule, n, tau)
            invariants_hold = not [m for m in schedule_invariants(s, tee) if "below tau_c" in m]
            if s.nodes[n].tau_hi < tau_c:
                continue  # the fault moved the violation to the closing gap
            assert bool(verify_safety(s, tee)) == invariants_hold


def test_platoon_spacing_checked(balanced, single):
    s, _ = balanced
    p = next(iter(s.movements))
    m = s.movements[p]
    bad = dataclasses.replace(s, movements={**s.movements, p: dataclasses.replace(m, T=m.T + 0.3)})
    assert any(v.kind == "platoon" for v in verify_safety(bad, single).violations)


def test_headway_matches_order(tee_schedule):
    for n, nt in tee_schedule.nodes.items():
        assert headway_from_order(tee_schedule, n) == pytest.approx(nt.tau_lo, abs=1e-6)


def test_timeline_alternates_and_repeats(tee_schedule):
    s = tee_schedule
    for n, ivs in occupancy_timeline(s, 4).items():
        nt = s.nodes[n]
        first, second = (nt.p1, nt.p2) if nt.z == 1 else (nt.p2, nt.p1)
        assert [iv.movement for iv in ivs] == [first, second] * 4
        assert all(a.start <= b.start for a, b in zip(ivs, ivs[1:]))
        for p in (nt.p1, nt.p2):
            starts = [iv.start for iv in ivs if iv.movement == p]
            assert [t - starts[0] for t in starts] == pytest.approx([k * s.C for k in range(4)])


def test_prop1_examples(params, balanced):
    s, d = balanced
    assert check_prop1(s, d, params)
    q = 1000 / 3600
    s7 = dataclasses.replace(s, C=7.0)
    res = check_prop1(s7, {"a": q}, params)
    assert not res
    assert res.counterexample["a"] == pytest.approx(7.0 * q)
    assert check_prop1(dataclasses.replace(s, C=10.0), {"a": 0.5}, params)


def test_prop1_on_imbalanced(single, params):
    s, d = _m1(single, params, 1800, 100)
    assert check_prop1(s, d, params)


def test_prop1_skips_muted_movements(balanced, params):
    s, _ = balanced
    assert check_prop1(s, {"light": 1 / 60}, params)  # 1/q = 60 s > tau_star


@st.composite
def schedules(draw):
    ids = ["a", "b"]
    C = draw(st.floats(4.5, 120.0))
    L = {p: draw(st.integers(1, 40)) for p in ids}
    t_off = {p: draw(st.floats(0.0, 200.0)) for p in ids}
    return C, L, t_off


@settings(max_examples=60)
@given(schedules())
def test_json_round_trip(tmp_path_factory, case):
    C, L, t_off = case
    params = CmatParameters()
    fp = params.flow
    movements = {p: MovementTiming(C - L[p] / params.q_max, L[p] / params.q_max, L[p], t_off[p],
                                   (L[p] - 1) * fp.tau_f + L[p] * fp.pass_time) for p in L}
    t_arr = {(p, "n"): t_off[p] + movements[p].r for p in L}
    nodes = {"n": NodeTiming("a", "b", 1.0 + C / 7, C / 3, 1)}
    s = CyclicSchedule(C, movements, nodes, t_arr, params, "M2")
    path = tmp_path_factory.mktemp("s") / "s.json"
    save_controller(s, path)
    back = load_controller(path)
    assert back == s
    assert schedule_to_dict(back) == schedule_to_dict(s)


def test_file_round_trip_of_solved_schedule(tmp_path, tee_schedule):
    path = tmp_path / "tee.json"
    save_controller(tee_schedule, path)
    assert load_controller(path) == tee_schedule


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.pop("C"), "$.C"),
        (lambda d: d.update(format="other/2"), "$.format"),
        (lambda d: d["params"].update(tau_c="x"), "$.params.tau_c"),
        (lambda d: d["movements"]["p1"].update(L=2.5), "$.movements.p1.L"),
        (lambda d: next(iter(d["nodes"].values())).update(z=3), ".z"),
        (lambda d: next(iter(d["nodes"].values())).update(p1="nowhere"), ".p1"),
        (lambda d: d["t_arr"].update(ghost={}), "$.t_arr.ghost"),
        (lambda d: d["movements"]["p1"].update(r=float("nan")), "$.movements.p1.r"),
    ],
)
def test_format_errors_name_the_field(tee_schedule, mutate, where):
    d = json.loads(json.dumps(schedule_to_dict(tee_schedule)))
    mutate(d)
    with pytest.raises(ScheduleFormatError, match=re.escape(where)):
        schedule_from_dict(d)


def test_corrupt_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScheduleFormatError, match=r"^\$: not valid JSON"):
        load_controller(path)


def test_m2_schedule_safe_on_saturated_conflict(single, params):
    d = vph(single, 2880, 2880)
    s = extract_schedule(solve(build_m2(single, d, params)), single, params, "M2")
    assert schedule_invariants(s, single) == []
    assert verify_safety(s, single).ok
