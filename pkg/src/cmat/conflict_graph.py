"""Directed conflict graphs: conflict points, arcs between them, and movements.

A movement is an origin-destination trajectory given as the ordered list of
conflict points it crosses.  Arcs join consecutive points of a movement and
carry the road length between them, so free-flow travel times follow directly.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

MOVEMENT_KINDS = ("through", "left", "right")


@dataclass(frozen=True)
class Passage:
    """How a movement traverses one intersection (used by signal baselines)."""

    intersection: str
    approach: str
    kind: str
    lane: int


@dataclass(frozen=True)
class Movement:
    id: str
    nodes: tuple[str, ...]
    kind: str = "through"
    passages: tuple[Passage, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "passages", tuple(self.passages))


@dataclass(frozen=True)
class ConflictGraph:
    """Conflict points ``nodes``, arc lengths keyed by ``(from, to)`` and movements.

    ``node_site`` optionally maps a node to the intersection it belongs to.
    """

    nodes: frozenset[str]
    arcs: Mapping[tuple[str, str], float]
    movements: tuple[Movement, ...]
    node_site: Mapping[str, str] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "arcs", dict(self.arcs))
        object.__setattr__(self, "movements", tuple(self.movements))
        object.__setattr__(self, "node_site", dict(self.node_site))

    def movement(self, movement_id: str) -> Movement:
        for p in self.movements:
            if p.id == movement_id:
                return p
        raise KeyError(f"unknown movement {movement_id!r}")

    @property
    def movement_ids(self) -> list[str]:
        """Movement ids in the fixed lexicographic order used by the models."""
        return sorted(p.id for p in self.movements)

    def movements_at(self, node: str) -> list[str]:
        return sorted(p.id for p in self.movements if node in p.nodes)

    def node_pairs(self) -> list[tuple[str, str, str]]:
        """``(node, p1, p2)`` for every node with exactly two movements, p1 < p2."""
        out = []
        for n in sorted(self.nodes):
            ps = self.movements_at(n)
            if len(ps) == 2:
                out.append((n, ps[0], ps[1]))
        return out

    def sites(self) -> list[str]:
        return sorted(set(self.node_site.values()))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        # truthy iff the graph is valid
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_graph(g: ConflictGraph) -> ValidationReport:
    """Check every structural assumption; violations are collected, never raised."""
    report = ValidationReport()
    for (a, b), length in g.arcs.items():
        if not length > 0:
            report.add(f"arc {a}->{b} has non-positive length {length}")
        for end in (a, b):
            if end not in g.nodes:
                report.add(f"arc {a}->{b} references unknown node {end}")

    ids = [p.id for p in g.movements]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        report.add(f"duplicate movement id {dup}")

    for p in g.movements:
        if not p.nodes:
            report.add(f"movement {p.id} has no conflict points")
            continue
        if len(set(p.nodes)) != len(p.nodes):
            report.add(f"movement {p.id} repeats a node")
        if p.kind not in MOVEMENT_KINDS:
            report.add(f"movement {p.id} has unknown kind {p.kind!r}")
        for n in p.nodes:
            if n not in g.nodes:
                report.add(f"movement {p.id} visits unknown node {n}")
        for a, b in zip(p.nodes, p.nodes[1:]):
            if (a, b) not in g.arcs:
                report.add(f"movement {p.id} has broken path: no arc {a}->{b}")

    users: dict[str, set[str]] = defaultdict(set)
    for p in g.movements:
        for n in p.nodes:
            users[n].add(p.id)
    for n in sorted(g.nodes):
        if len(users[n]) != 2:
            report.add(f"node {n} has |P_n| = {len(users[n])} movements, expected 2")

    shared: dict[tuple[str, str], list[str]] = defaultdict(list)
    for n, ps in users.items():
        if len(ps) == 2:
            shared[tuple(sorted(ps))].append(n)
    for (p1, p2), ns in sorted(shared.items()):
        if len(ns) > 1:
            report.add(f"movements {p1} and {p2} share {len(ns)} conflict points {sorted(ns)}")
    return report


def travel_time(g: ConflictGraph, p: Movement | str, n: str, v_f: float) -> float:
    """Free-flow time from the movement's first conflict point to ``n``."""
    if isinstance(p, str):
        p = g.movement(p)
    if n not in p.nodes:
        raise ValueError(f"node {n} is not on movement {p.id}")
    if v_f <= 0:
        raise ValueError("free-flow speed must be positive")
    distance = 0.0
    for a, b in zip(p.nodes, p.nodes[1:]):
        if a == n:
            break
        distance += g.arcs[(a, b)]
        if b == n:
            break
    return distance / v_f


def travel_times(g: ConflictGraph, v_f: float) -> dict[tuple[str, str], float]:
    """All ``(movement, node) -> travel time`` pairs."""
    out = {}
    for p in g.movements:
        t = 0.0
        out[(p.id, p.nodes[0])] = 0.0
        for a, b in zip(p.nodes, p.nodes[1:]):
            t += g.arcs[(a, b)] / v_f
            out[(p.id, b)] = t
    return out


def path_length(g: ConflictGraph, p: Movement) -> float:
    return sum(g.arcs[(a, b)] for a, b in zip(p.nodes, p.nodes[1:]))


def from_movement_paths(
    paths: Mapping[str, Iterable[str]],
    lengths: Mapping[tuple[str, str], float],
    kinds: Mapping[str, str] | None = None,
    name: str = "",
) -> ConflictGraph:
    """Assemble a graph from explicit node sequences and arc lengths."""
    kinds = kinds or {}
    movements = [Movement(pid, tuple(ns), kinds.get(pid, "through")) for pid, ns in paths.items()]
    nodes = set(itertools.chain.from_iterable(p.nodes for p in movements))
    arcs = {}
    for p in movements:
        for a, b in zip(p.nodes, p.nodes[1:]):
            arcs[(a, b)] = float(lengths[(a, b)])
    return ConflictGraph(frozenset(nodes), arcs, tuple(movements), name=name)
