"""Comparison controllers: unit-platoon alternation and fixed-time signals.

The unit-platoon schedule is the relaxed model with every platoon pinned to a
single vehicle and the cycle minimised, which reproduces the capacity of
strict one-by-one alternation at ``tau_c`` headways.  Fixed-time plans use
Webster's minimum cycle ``(1.5 TL + 5) / (1 - Y)`` with green split in
proportion to the critical flow ratios.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .conflict_graph import ConflictGraph
from .milp_solver import SolveOptions, solve
from .model import CmatParameters, MovementDemand, build_model
from .lp import OPTIMAL
from .schedule import CyclicSchedule, extract_schedule

PLAN_FORMAT = "cmat-schedule/1"
_AXIS = {"S": "NS", "N": "NS", "E": "EW", "W": "EW"}


class PreconditionError(ValueError):
    pass


def rc_schedule(
    g: ConflictGraph, params: CmatParameters, opts: SolveOptions | None = None
) -> CyclicSchedule:
    """Shortest cycle in which every movement sends exactly one vehicle.

    Demand only decides which movements are muted, and with all platoons
    pinned to one that distinction disappears, so saturated demand is used.
    """
    fp = params.flow
    c_min = 2 * fp.tau_c + 2 * fp.pass_time
    if params.c_max < c_min:
        raise PreconditionError(f"c_max {params.c_max:g} < two unit platoons with headways {c_min:g}")
    demands = {p: params.q_max for p in g.movement_ids}
    inst = build_model(g, demands, params, "m2", fixed_platoon=1, objective=(1.0, 0.0))
    if opts is None:  # the built-in search is only practical on a few conflict points
        opts = SolveOptions(backend="bnb" if len(g.nodes) <= 3 else "highs")
    sol = solve(inst, opts)
    if sol.status != OPTIMAL:
        raise RuntimeError(f"unit-platoon schedule not found: {sol.status}")
    return extract_schedule(sol, g, params, model="rc")


@dataclass(frozen=True)
class Phase:
    movements: tuple[str, ...]
    green: float
    lost: float
    flow_ratio: float = 0.0


@dataclass(frozen=True)
class TscConfig:
    lost_per_phase: float = 4.0
    # intersection -> list of phases (each a list of movement ids); None = standard plan
    phase_groups: Mapping[str, Sequence[Sequence[str]]] | None = None

    def __post_init__(self):
        if not self.lost_per_phase >= 0:
            raise ValueError("lost_per_phase must be non-negative")


@dataclass(frozen=True)
class SignalPlan:
    """Common-cycle fixed-time plan; phase ``i`` at an intersection starts at
    ``offset + sum(green + lost of earlier phases)`` and its lost time follows its green."""

    cycle: float
    phases: Mapping[str, tuple[Phase, ...]]
    offsets: Mapping[str, float]
    feasible: bool = True
    critical_ratio: Mapping[str, float] = field(default_factory=dict)

    def green_windows(self, site: str, movement: str) -> list[tuple[float, float]]:
        """Green intervals (start, end) within ``[offset, offset + cycle)``."""
        out = []
        t = self.offsets.get(site, 0.0)
        for ph in self.phases[site]:
            if movement in ph.movements:
                out.append((t, t + ph.green))
            t += ph.green + ph.lost
        return out

    def served(self) -> set[str]:
        return {p for phs in self.phases.values() for ph in phs for p in ph.movements}

    def to_dict(self) -> dict:
        return {
            "format": PLAN_FORMAT,
            "type": "signal_plan",
            "cycle": self.cycle,
            "feasible": self.feasible,
            "offsets": dict(sorted(self.offsets.items())),
            "critical_ratio": dict(sorted(self.critical_ratio.items())),
            "phases": {
                s: [
                    {"movements": list(ph.movements), "green": ph.green, "lost": ph.lost, "flow_ratio": ph.flow_ratio}
                    for ph in phs
                ]
                for s, phs in sorted(self.phases.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SignalPlan":
        from .schedule import ScheduleFormatError

        if d.get("format") != PLAN_FORMAT:
            raise ScheduleFormatError(f"$.format: expected {PLAN_FORMAT!r}, got {d.get('format')!r}")
        try:
            phases = {
                s: tuple(
                    Phase(tuple(ph["movements"]), float(ph["green"]), float(ph["lost"]), float(ph.get("flow_ratio", 0.0)))
                    for ph in phs
                )
                for s, phs in d["phases"].items()
            }
            return cls(
                float(d["cycle"]), phases, {k: float(v) for k, v in d["offsets"].items()},
                bool(d.get("feasible", True)), {k: float(v) for k, v in d.get("critical_ratio", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScheduleFormatError(f"$.phases: malformed signal plan ({exc})") from exc


def webster_cycle(lost_total: float, y_total: float) -> float:
    if y_total >= 1.0:
        raise ValueError(f"critical flow ratio sum {y_total:.4f} >= 1: oversaturated")
    return (1.5 * lost_total + 5.0) / (1.0 - y_total)


def lane_key(g: ConflictGraph, p: str, site: str) -> tuple:
    """Queue a movement joins at ``site``; movements sharing a physical lane share a key."""
    for q in g.movement(p).passages:
        if q.intersection == site:
            return (site, q.approach, q.lane)
    return (site, p)


def movement_sites(g: ConflictGraph, p: str) -> list[str]:
    mv = g.movement(p)
    if mv.passages:
        return [q.intersection for q in mv.passages]
    return [g.node_site.get(mv.nodes[0], "")]


def standard_phases(g: ConflictGraph) -> dict[str, list[list[str]]]:
    """Textbook plans: through+right and left phases per axis.

    An axis with a single approach at an intersection (the stem of a T) gets one
    combined phase.  Graphs without lane geometry get one phase per movement.
    """
    by_site: dict[str, dict[str, list[str]]] = defaultdict(lambda: defaultdict(list))
    approaches: dict[str, dict[str, set]] = defaultdict(lambda: defaultdict(set))
    plain = []
    for p in g.movement_ids:
        mv = g.movement(p)
        if not mv.passages:
            plain.append(p)
            continue
        for q in mv.passages:
            axis = _AXIS[q.approach]
            approaches[q.intersection][axis].add(q.approach)
            cls = "left" if q.kind == "left" else "through"
            by_site[q.intersection][f"{axis}-{cls}"].append(p)
    out: dict[str, list[list[str]]] = {}
    for site in sorted(by_site):
        groups = by_site[site]
        phases = []
        for axis in ("NS", "EW"):
            thr, left = groups.get(f"{axis}-through", []), groups.get(f"{axis}-left", [])
            if len(approaches[site][axis]) == 1:
                merged = sorted(thr + left)
                if merged:
                    phases.append(merged)
            else:
                phases.extend(sorted(ph) for ph in (thr, left) if ph)
        out[site] = phases
    if plain:
        site = sorted(set(g.node_site.values()) or {""})[0] if g.node_site else ""
        out.setdefault(site, []).extend([p] for p in plain)
    return out


def phase_conflicts(g: ConflictGraph, phases: Mapping[str, Sequence[Sequence[str]]]) -> list[str]:
    """Crossing conflicts served in one phase (diverging from a shared lane is allowed)."""
    bad = []
    for site, phs in phases.items():
        for ph in phs:
            members = set(ph)
            for n, p1, p2 in g.node_pairs():
                if p1 in members and p2 in members and g.node_site.get(n, site) == site:
                    if lane_key(g, p1, site) != lane_key(g, p2, site):
                        bad.append(f"{site}: phase {sorted(members)} serves crossing pair {p1}/{p2} at {n}")
    return bad


def _link_travel(g: ConflictGraph, v_f: float) -> float:
    links = [length for (a, b), length in g.arcs.items() if g.node_site.get(a) != g.node_site.get(b)]
    return max(links) / v_f if links else 0.0


def webster_plan(
    g: ConflictGraph,
    demands: Mapping[str, float],
    params: CmatParameters,
    cfg: TscConfig | None = None,
) -> SignalPlan:
    """Minimum-cycle fixed-time plan with a common cycle across intersections.

    Flow ratios are taken per lane, so a shared lane carries the sum of its
    movements' flows.  When any intersection is oversaturated the plan is
    marked infeasible and still returned at the cycle cap, so it can be
    simulated.
    """
    cfg = cfg or TscConfig()
    demands = MovementDemand({p: demands[p] for p in g.movement_ids}).clamped(params.q_max)
    groups = {s: [list(ph) for ph in phs] for s, phs in (cfg.phase_groups or standard_phases(g)).items()}
    bad = phase_conflicts(g, groups)
    if bad:
        raise ValueError("phase plan serves conflicting movements: " + "; ".join(bad))
    missing = set(g.movement_ids) - {p for phs in groups.values() for ph in phs for p in ph}
    if missing:
        raise ValueError(f"movements served by no phase: {sorted(missing)}")

    ratios: dict[str, list[float]] = {}
    cycles = {}
    feasible = True
    for site, phs in groups.items():
        lane_flow: dict[tuple, float] = defaultdict(float)
        for p in g.movement_ids:
            if site in movement_sites(g, p):
                lane_flow[lane_key(g, p, site)] += demands[p]
        ys = [max(lane_flow[lane_key(g, p, site)] for p in ph) / params.q_max for ph in phs]
        ratios[site] = ys
        lost = cfg.lost_per_phase * len(phs)
        try:
            cycles[site] = webster_cycle(lost, sum(ys))
        except ValueError:
            feasible = False
            cycles[site] = params.c_max
    cycle = min(max(cycles.values()), params.c_max)

    phases = {}
    for site, phs in groups.items():
        ys = ratios[site]
        y_total = sum(ys)
        effective = cycle - cfg.lost_per_phase * len(phs)
        if effective <= 0:
            raise ValueError(f"lost time at {site} exceeds the cycle")
        shares = [y / y_total for y in ys] if y_total > 0 else [1.0 / len(phs)] * len(phs)
        phases[site] = tuple(
            Phase(tuple(ph), share * effective, cfg.lost_per_phase, y) for ph, share, y in zip(phs, shares, ys)
        )
    sites = sorted(groups)
    travel = _link_travel(g, params.flow.v_f)
    # the major intersection keeps offset 0; the others are shifted by the link travel time
    offsets = {s: (0.0 if k == 0 else travel) for k, s in enumerate(sites)}
    return SignalPlan(cycle, phases, offsets, feasible, {s: sum(ys) for s, ys in ratios.items()})
