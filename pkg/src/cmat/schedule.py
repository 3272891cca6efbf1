"""Cyclic platoon schedules: extraction from a solved model, verification, files.

A schedule fixes one cycle length and, per movement, a red/green split, a
platoon size and an offset.  Everything downstream (occupancy timelines,
safety checks, the simulator) reads only this object.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .analytics import FlowParameters
from .conflict_graph import ConflictGraph, travel_times
from .milp_solver import MilpSolution
from .lp import OPTIMAL
from .model import CmatParameters, muted_set

SCHEDULE_FORMAT = "cmat-schedule/1"
EPS = 1e-9


@dataclass(frozen=True)
class MovementTiming:
    r: float
    g: float
    L: int
    t_off: float
    T: float


@dataclass(frozen=True)
class NodeTiming:
    """Headways at one conflict point; ``z = 1`` means ``p1`` passes first."""

    p1: str
    p2: str
    tau_lo: float
    tau_hi: float
    z: int


@dataclass(frozen=True)
class CyclicSchedule:
    C: float
    movements: Mapping[str, MovementTiming]
    nodes: Mapping[str, NodeTiming]
    t_arr: Mapping[tuple[str, str], float]
    params: CmatParameters
    model: str = ""

    def __post_init__(self):
        object.__setattr__(self, "movements", dict(self.movements))
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "t_arr", dict(self.t_arr))

    @property
    def platoon_sizes(self) -> dict[str, int]:
        return {p: m.L for p, m in sorted(self.movements.items())}


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    movement: str
    cycle: int


@dataclass
class SafetyViolation:
    node: str
    cycle: int
    kind: str
    detail: str


@dataclass
class SafetyReport:
    violations: list[SafetyViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def at(self, node: str) -> list[SafetyViolation]:
        return [v for v in self.violations if v.node == node]


@dataclass(frozen=True)
class Prop1Result:
    holds: bool
    counterexample: dict[str, float] = field(default_factory=dict)

    def __bool__(self):
        return self.holds


def extract_schedule(sol: MilpSolution, g: ConflictGraph, params: CmatParameters, model: str = "") -> CyclicSchedule:
    """Read the timing variables of a solved model into a schedule."""
    if sol.status != OPTIMAL and not (sol.status == "limit_reached" and sol.has_solution):
        raise ValueError(f"cannot extract a schedule from a {sol.status} solution")
    v = sol.values
    movements = {}
    for p in g.movement_ids:
        movements[p] = MovementTiming(
            r=v[("r", p)],
            g=v[("g", p)],
            L=int(round(v[("L", p)])),
            t_off=v[("t_off", p)],
            T=v[("T", p)],
        )
    nodes = {}
    t_arr = {}
    for n, p1, p2 in g.node_pairs():
        nodes[n] = NodeTiming(p1, p2, v[("tau_lo", n)], v[("tau_hi", n)], int(round(v[("z", n)])))
    for p in g.movement_ids:
        for n in g.movement(p).nodes:
            t_arr[(p, n)] = v[("t_arr", p, n)]
    return CyclicSchedule(v[("C",)], movements, nodes, t_arr, params, model)


def platoon_occupancy(L: int, flow: FlowParameters) -> float:
    return (L - 1) * flow.tau_f + L * flow.pass_time


def schedule_invariants(s: CyclicSchedule, g: ConflictGraph, tol: float = 1e-6) -> list[str]:
    """Violated structural identities of a schedule (empty when all hold)."""
    fp = s.params.flow
    tt = travel_times(g, fp.v_f)
    out = []
    for p, m in s.movements.items():
        if abs(s.C - m.r - m.g) > tol:
            out.append(f"{p}: C != r + g")
        if abs(m.T - platoon_occupancy(m.L, fp)) > tol:
            out.append(f"{p}: T inconsistent with L={m.L}")
        for n in g.movement(p).nodes:
            if abs(s.t_arr[(p, n)] - (m.t_off + m.r + tt[(p, n)])) > tol:
                out.append(f"{p}@{n}: arrival time inconsistent with offset")
    for n, nt in s.nodes.items():
        t1, t2 = s.movements[nt.p1].T, s.movements[nt.p2].T
        if abs(s.C - nt.tau_lo - nt.tau_hi - t1 - t2) > tol:
            out.append(f"{n}: C != tau_lo + tau_hi + T1 + T2")
        for name, tau in (("tau_lo", nt.tau_lo), ("tau_hi", nt.tau_hi)):
            if tau < fp.tau_c - EPS:
                out.append(f"{n}: {name}={tau:.6g} below tau_c")
    return out


def headway_from_order(s: CyclicSchedule, node: str) -> float:
    """First headway from the conditional definition: the gap after whichever platoon leads."""
    nt = s.nodes[node]
    a1, a2 = s.t_arr[(nt.p1, node)], s.t_arr[(nt.p2, node)]
    if nt.z == 1:
        return a2 - a1 - s.movements[nt.p1].T
    return a1 - a2 - s.movements[nt.p2].T


def occupancy_timeline(s: CyclicSchedule, k_cycles: int = 5) -> dict[str, list[Interval]]:
    """Per node, every platoon occupancy interval over ``k_cycles`` cycles, sorted."""
    out = {}
    for n, nt in s.nodes.items():
        ivs = []
        for p in (nt.p1, nt.p2):
            base = s.t_arr[(p, n)]
            occ = s.movements[p].T
            for m in range(k_cycles):
                start = base + m * s.C
                ivs.append(Interval(start, start + occ, p, m))
        ivs.sort(key=lambda iv: (iv.start, iv.movement))
        out[n] = ivs
    return out


def verify_safety(s: CyclicSchedule, g: ConflictGraph, k_cycles: int = 5) -> SafetyReport:
    """Check rear-to-front gaps between platoons and spacing inside each platoon."""
    if k_cycles < 3:
        raise ValueError("k_cycles must be at least 3")
    fp = s.params.flow
    report = SafetyReport()
    known = set(g.nodes)
    for n in s.nodes:
        if n not in known:
            report.violations.append(SafetyViolation(n, -1, "graph", "node not in conflict graph"))
    for n, ivs in occupancy_timeline(s, k_cycles).items():
        for prev, nxt in zip(ivs, ivs[1:]):
            if prev.movement == nxt.movement:
                continue
            gap = nxt.start - prev.end
            if gap < fp.tau_c - EPS:
                report.violations.append(
                    SafetyViolation(
                        n, nxt.cycle, "gap",
                        f"{prev.movement}->{nxt.movement} gap {gap:.6g} < tau_c {fp.tau_c:g}",
                    )
                )
    spacing = fp.tau_f + fp.pass_time
    for p, m in s.movements.items():
        if m.L < 1:
            report.violations.append(SafetyViolation("", -1, "platoon", f"{p}: platoon size {m.L}"))
            continue
        if m.L == 1:
            if abs(m.T - fp.pass_time) > 1e-6:
                report.violations.append(
                    SafetyViolation("", -1, "platoon", f"{p}: single vehicle occupies {m.T:.6g}")
                )
            continue
        # front-passage spacing implied by the occupancy interval
        implied = (m.T - fp.pass_time) / (m.L - 1)
        if abs(implied - spacing) > 1e-6:
            report.violations.append(
                SafetyViolation(
                    "", -1, "platoon", f"{p}: vehicle spacing {implied:.6g} != {spacing:.6g}"
                )
            )
    return report


def check_prop1(s: CyclicSchedule, demands: Mapping[str, float], params: CmatParameters) -> Prop1Result:
    """The cycle must hold a whole number of arrivals of every unmuted movement."""
    muted = muted_set(demands, params)
    bad = {}
    for p, q in sorted(demands.items()):
        if p in muted:
            continue
        k = s.C * q
        if abs(k - round(k)) > 1e-6 or round(k) < 1:
            bad[p] = k
    return Prop1Result(not bad, bad)


def inject_headway_fault(s: CyclicSchedule, node: str, tau_lo: float) -> CyclicSchedule:
    """Move the trailing platoon at ``node`` so that its first headway becomes ``tau_lo``."""
    nt = s.nodes[node]
    lead, trail = (nt.p1, nt.p2) if nt.z == 1 else (nt.p2, nt.p1)
    shift = tau_lo - nt.tau_lo
    t_arr = dict(s.t_arr)
    t_arr[(trail, node)] += shift
    nodes = dict(s.nodes)
    nodes[node] = dataclasses.replace(nt, tau_lo=tau_lo, tau_hi=nt.tau_hi - shift)
    return dataclasses.replace(s, nodes=nodes, t_arr=t_arr)


# ---------------------------------------------------------------------------
# serialisation


def schedule_to_dict(s: CyclicSchedule) -> dict:
    fp = s.params.flow
    arrivals: dict[str, dict[str, float]] = {}
    for (p, n), t in sorted(s.t_arr.items()):
        arrivals.setdefault(p, {})[n] = t
    return {
        "format": SCHEDULE_FORMAT,
        "type": "cyclic_schedule",
        "model": s.model,
        "C": s.C,
        "params": {
            "v_f": fp.v_f,
            "l": fp.l,
            "tau_f": fp.tau_f,
            "tau_c": fp.tau_c,
            "tau_star": s.params.tau_star,
            "lam": s.params.lam,
            "c_max": s.params.c_max,
        },
        "movements": {p: dataclasses.asdict(m) for p, m in sorted(s.movements.items())},
        "nodes": {n: dataclasses.asdict(nt) for n, nt in sorted(s.nodes.items())},
        "t_arr": arrivals,
    }


class ScheduleFormatError(ValueError):
    """Raised with the path of the first invalid field."""


def _number(obj, key, path, integer=False):
    if not isinstance(obj, dict) or key not in obj:
        raise ScheduleFormatError(f"{path}.{key}: missing")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ScheduleFormatError(f"{path}.{key}: expected a finite number, got {v!r}")
    if integer and v != int(v):
        raise ScheduleFormatError(f"{path}.{key}: expected an integer, got {v!r}")
    return int(v) if integer else float(v)


def _mapping(obj, key, path):
    if not isinstance(obj, dict) or not isinstance(obj.get(key), dict):
        raise ScheduleFormatError(f"{path}.{key}: expected an object")
    return obj[key]


def schedule_from_dict(d: dict) -> CyclicSchedule:
    if not isinstance(d, dict):
        raise ScheduleFormatError("$: expected an object")
    if d.get("format") != SCHEDULE_FORMAT:
        raise ScheduleFormatError(f"$.format: expected {SCHEDULE_FORMAT!r}, got {d.get('format')!r}")
    if d.get("type") != "cyclic_schedule":
        raise ScheduleFormatError(f"$.type: expected 'cyclic_schedule', got {d.get('type')!r}")
    cycle = _number(d, "C", "$")
    pd = _mapping(d, "params", "$")
    try:
        flow = FlowParameters(*(_number(pd, k, "$.params") for k in ("v_f", "l", "tau_f", "tau_c")))
        params = CmatParameters(
            flow, _number(pd, "tau_star", "$.params"), _number(pd, "lam", "$.params"),
            _number(pd, "c_max", "$.params"),
        )
    except ScheduleFormatError:
        raise
    except ValueError as exc:
        raise ScheduleFormatError(f"$.params: {exc}") from exc
    movements = {}
    for p, md in _mapping(d, "movements", "$").items():
        path = f"$.movements.{p}"
        movements[p] = MovementTiming(
            _number(md, "r", path), _number(md, "g", path), _number(md, "L", path, integer=True),
            _number(md, "t_off", path), _number(md, "T", path),
        )
    nodes = {}
    for n, nd in _mapping(d, "nodes", "$").items():
        path = f"$.nodes.{n}"
        for key in ("p1", "p2"):
            if not isinstance(nd, dict) or nd.get(key) not in movements:
                raise ScheduleFormatError(f"{path}.{key}: unknown movement {nd.get(key) if isinstance(nd, dict) else None!r}")
        z = _number(nd, "z", path, integer=True)
        if z not in (0, 1):
            raise ScheduleFormatError(f"{path}.z: expected 0 or 1, got {z}")
        nodes[n] = NodeTiming(nd["p1"], nd["p2"], _number(nd, "tau_lo", path), _number(nd, "tau_hi", path), z)
    t_arr = {}
    for p, per_node in _mapping(d, "t_arr", "$").items():
        if p not in movements:
            raise ScheduleFormatError(f"$.t_arr.{p}: unknown movement")
        if not isinstance(per_node, dict):
            raise ScheduleFormatError(f"$.t_arr.{p}: expected an object")
        for n in per_node:
            t_arr[(p, n)] = _number(per_node, n, f"$.t_arr.{p}")
    for n, nt in nodes.items():
        for p in (nt.p1, nt.p2):
            if (p, n) not in t_arr:
                raise ScheduleFormatError(f"$.t_arr.{p}.{n}: missing")
    return CyclicSchedule(cycle, movements, nodes, t_arr, params, str(d.get("model", "")))


def save_controller(obj, path: str | Path) -> None:
    """Write a schedule or signal plan as JSON."""
    from .baselines import SignalPlan

    if isinstance(obj, CyclicSchedule):
        d = schedule_to_dict(obj)
    elif isinstance(obj, SignalPlan):
        d = obj.to_dict()
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_controller(path: str | Path):
    from .baselines import SignalPlan

    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"$: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if isinstance(d, dict) and d.get("type") == "signal_plan":
        return SignalPlan.from_dict(d)
    return schedule_from_dict(d)
