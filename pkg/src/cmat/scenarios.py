"""Builders for the four test layouts plus the staggered T used in the oracle tests.

Conflict points are found geometrically.  Each intersection is laid out on a
plane with right-hand traffic: straight lanes for through movements and
quarter-ellipse paths for turns.  Every pair of paths that cross yields one
conflict point; two movements leaving from one shared lane yield a diverging
point at the lane entrance.  Arc lengths are distances along the paths, except
for the link between connected intersections, whose length is the configured
spacing.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, MultiPoint, Point

from .conflict_graph import ConflictGraph, Movement, Passage, from_movement_paths

SCENARIOS = ("single_conflict", "four_leg_dedicated", "four_leg_shared", "connected_pair")

# approach -> (rotation in quarter turns, travel direction label)
_APPROACHES = {"S": (0, "NB"), "E": (1, "WB"), "N": (2, "SB"), "W": (3, "EB")}


@dataclass(frozen=True)
class GeometryParams:
    lane_width: float = 3.5
    spacing: float = 500.0
    arc_samples: int = 64
    t_link: float = 20.0  # n1 -> n2 distance in the staggered T layout

    def __post_init__(self):
        for name in ("lane_width", "spacing", "t_link"):
            if not getattr(self, name) > 0:
                raise ValueError(f"geometry.{name} must be positive")
        if self.arc_samples < 4:
            raise ValueError("geometry.arc_samples must be at least 4")


@dataclass(frozen=True)
class Segment:
    """One movement's passage through one site (intersection)."""

    movement: str
    site: str
    approach: str
    lane: int
    kind: str
    exit_lane: int | None = None


@dataclass
class Site:
    name: str
    center: tuple[float, float] = (0.0, 0.0)
    segments: list[Segment] = field(default_factory=list)


def _rotate(points: np.ndarray, quarter_turns: int) -> np.ndarray:
    a = quarter_turns * math.pi / 2
    c, s = round(math.cos(a)), round(math.sin(a))
    rot = np.array([[c, -s], [s, c]], dtype=float)
    return points @ rot.T


def _local_path(seg: Segment, half: float, w: float, samples: int) -> np.ndarray:
    # drawn for a northbound approach entering at y = -half, then rotated
    i = seg.lane
    j = seg.lane if seg.exit_lane is None else seg.exit_lane
    xs = (i + 0.5) * w
    if seg.kind == "through":
        pts = np.array([[xs, -half], [(j + 0.5) * w, half]])
    else:
        theta = np.linspace(0.0, math.pi / 2, samples + 1)
        if seg.kind == "left":
            a, b = xs + half, (j + 0.5) * w + half
            pts = np.column_stack([-half + a * np.cos(theta), -half + b * np.sin(theta)])
        elif seg.kind == "right":
            a, b = half - xs, half - (j + 0.5) * w
            pts = np.column_stack([half - a * np.cos(theta), -half + b * np.sin(theta)])
        else:
            raise ValueError(f"unknown movement kind {seg.kind!r}")
    return pts


def _site_half_width(site: Site, w: float) -> float:
    widest = 0
    for seg in site.segments:
        widest = max(widest, seg.lane, seg.exit_lane if seg.exit_lane is not None else seg.lane)
    return (widest + 1.5) * w


def _intersections(a: LineString, b: LineString) -> list[Point]:
    hit = a.intersection(b)
    if hit.is_empty:
        return []
    if isinstance(hit, Point):
        return [hit]
    if isinstance(hit, MultiPoint):
        return list(hit.geoms)
    # collinear overlap: treat the first shared point as the conflict
    return [Point(hit.coords[0])] if hasattr(hit, "coords") else [Point(g.coords[0]) for g in hit.geoms]


def build_layout(
    sites: list[Site],
    geometry: GeometryParams,
    name: str = "",
    order: dict[str, list[str]] | None = None,
) -> ConflictGraph:
    """Turn a lane layout into a conflict graph.

    A movement spanning several sites visits them in ``sites`` order unless
    ``order`` lists its sites explicitly.
    """
    order = order or {}
    w = geometry.lane_width
    lines: dict[tuple[str, str], LineString] = {}
    by_movement: dict[str, list[Segment]] = defaultdict(list)
    for site in sites:
        half = _site_half_width(site, w)
        rotation = {k: v[0] for k, v in _APPROACHES.items()}
        for seg in site.segments:
            local = _local_path(seg, half, w, geometry.arc_samples)
            pts = _rotate(local, rotation[seg.approach]) + np.asarray(site.center)
            lines[(seg.movement, site.name)] = LineString(pts)
            by_movement[seg.movement].append(seg)

    # position (distance along the local path) of every conflict point
    positions: dict[tuple[str, str], list[tuple[float, str]]] = defaultdict(list)
    node_site: dict[str, str] = {}
    for site in sites:
        segs = site.segments
        for ia in range(len(segs)):
            for ib in range(ia + 1, len(segs)):
                sa, sb = segs[ia], segs[ib]
                if sa.movement == sb.movement:
                    continue
                la, lb = lines[(sa.movement, site.name)], lines[(sb.movement, site.name)]
                if sa.approach == sb.approach and sa.lane == sb.lane:
                    hits = [Point(la.coords[0])]  # diverging from a shared lane
                    tag = "d"
                else:
                    hits = _intersections(la, lb)
                    tag = "x"
                first, second = sorted((sa.movement, sb.movement))
                for k, pt in enumerate(hits):
                    node = f"{site.name}:{first}{tag}{second}" + (f"#{k}" if k else "")
                    node_site[node] = site.name
                    positions[(sa.movement, site.name)].append((la.project(pt), node))
                    positions[(sb.movement, site.name)].append((lb.project(pt), node))

    site_rank = {s.name: k for k, s in enumerate(sites)}
    paths: dict[str, list[str]] = {}
    lengths: dict[tuple[str, str], float] = {}
    passages: dict[str, list[Passage]] = {}
    for mid, segs in by_movement.items():
        rank = {sname: k for k, sname in enumerate(order[mid])} if mid in order else site_rank
        ordered = sorted(segs, key=lambda seg: rank[seg.site])
        seq: list[tuple[str, float]] = []
        for seg in ordered:
            pts = sorted(positions[(mid, seg.site)])
            seq.extend((node, s) for s, node in pts)
        nodes = [n for n, _ in seq]
        for (a, sa), (b, sb) in zip(seq, seq[1:]):
            if node_site[a] == node_site[b]:
                lengths[(a, b)] = max(sb - sa, 1e-9)
            else:
                lengths[(a, b)] = geometry.spacing
        paths[mid] = nodes
        passages[mid] = [Passage(s.site, s.approach, s.kind, s.lane) for s in ordered]

    # flows follow the classification at the first listed site (the major one)
    major = sites[0].name
    kinds = {
        mid: next((q.kind for q in ps if q.intersection == major), ps[0].kind) for mid, ps in passages.items()
    }
    g = from_movement_paths(paths, lengths, kinds, name=name)
    movements = tuple(
        Movement(p.id, p.nodes, p.kind, tuple(passages[p.id])) for p in g.movements
    )
    return ConflictGraph(g.nodes, g.arcs, movements, node_site=node_site, name=name)


def _four_leg_site(name: str, lanes: dict[int, list[tuple[str, str]]], center=(0.0, 0.0)) -> Site:
    """Identical lane group on every approach: ``lane -> [(suffix, kind)]``."""
    site = Site(name, center)
    for approach, (_, direction) in _APPROACHES.items():
        for lane, entries in lanes.items():
            for suffix, kind in entries:
                exit_lane = {"left": 0, "right": 3}.get(kind)
                site.segments.append(
                    Segment(f"{direction}-{suffix}", name, approach, lane, kind, exit_lane)
                )
    return site


def single_conflict(geometry: GeometryParams | None = None) -> ConflictGraph:
    geometry = geometry or GeometryParams()
    site = Site("A")
    site.segments = [
        Segment("EB", "A", "W", 0, "through"),
        Segment("NB", "A", "S", 0, "through"),
    ]
    return build_layout([site], geometry, name="single_conflict")


def four_leg_dedicated(geometry: GeometryParams | None = None) -> ConflictGraph:
    lanes = {0: [("L", "left")], 1: [("T1", "through")], 2: [("T2", "through")]}
    return build_layout([_four_leg_site("A", lanes)], geometry or GeometryParams(), name="four_leg_dedicated")


def four_leg_shared(geometry: GeometryParams | None = None) -> ConflictGraph:
    lanes = {
        0: [("L", "left")],
        1: [("T1", "through")],
        2: [("T2", "through"), ("R", "right")],
    }
    return build_layout([_four_leg_site("A", lanes)], geometry or GeometryParams(), name="four_leg_shared")


def connected_pair(geometry: GeometryParams | None = None) -> ConflictGraph:
    """Four-leg major intersection A linked eastward to a T-shaped minor B.

    A has a left lane and a shared through/right lane on its N, S and W legs;
    its east leg is the link and carries three dedicated lanes fed by B.
    B has legs W (the link), E and S.  Eastbound link lanes all continue
    straight through B; B's two westbound lanes become A's WB left and WB
    through; B's shared south lane splits into a left turn that becomes A's WB
    right and a right turn heading east.
    """
    geometry = geometry or GeometryParams()
    w = geometry.lane_width
    a = Site("A")
    for approach in ("S", "N", "W"):
        d = _APPROACHES[approach][1]
        a.segments += [
            Segment(f"{d}-L", "A", approach, 0, "left", 0),
            Segment(f"{d}-T", "A", approach, 1, "through"),
            Segment(f"{d}-R", "A", approach, 1, "right", 3),
        ]
    a.segments += [
        Segment("WB-L", "A", "E", 0, "left", 0),
        Segment("WB-T", "A", "E", 1, "through"),
        Segment("WB-R", "A", "E", 2, "right", 3),
    ]
    # B sits east of A; its placement only affects drawing, the link length is the spacing
    b = Site("B", center=(geometry.spacing + 20 * w, 0.0))
    b.segments = [
        Segment("SB-L", "B", "W", 0, "through"),
        Segment("EB-T", "B", "W", 1, "through"),
        Segment("NB-R", "B", "W", 3, "through"),
        Segment("WB-L", "B", "E", 0, "through"),
        Segment("WB-T", "B", "E", 1, "through"),
        Segment("WB-R", "B", "S", 0, "left", 2),
        Segment("B-NB-R", "B", "S", 0, "right", 4),
    ]
    # westbound movements reach B first
    order = {"WB-L": ["B", "A"], "WB-T": ["B", "A"], "WB-R": ["B", "A"]}
    return build_layout([a, b], geometry, name="connected_pair", order=order)


def t_intersection(
    geometry: GeometryParams | None = None,
) -> ConflictGraph:
    """Staggered T: p1 crosses n1 then n2, p2 crosses only n1, p3 only n2."""
    geometry = geometry or GeometryParams()
    return from_movement_paths(
        {"p1": ["n1", "n2"], "p2": ["n1"], "p3": ["n2"]},
        {("n1", "n2"): geometry.t_link},
        name="t_intersection",
    )


def build_scenario(kind: str, geometry: GeometryParams | None = None) -> ConflictGraph:
    builders = {
        "single_conflict": single_conflict,
        "four_leg_dedicated": four_leg_dedicated,
        "four_leg_shared": four_leg_shared,
        "connected_pair": connected_pair,
        "t_intersection": t_intersection,
    }
    if kind not in builders:
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {sorted(builders)}")
    return builders[kind](geometry or GeometryParams())


# how a base demand vector maps onto movements: by movement id, by the
# suffix after the direction (applied identically to every leg), or by the
# movement's turn at the major intersection
DEMAND_LAYOUTS = {
    "single_conflict": ("movement", ("EB", "NB")),
    "four_leg_dedicated": ("suffix", ("T1", "T2", "L")),
    "four_leg_shared": ("suffix", ("R", "T1", "T2", "L")),
    "connected_pair": ("kind", ("right", "through", "left")),
    "t_intersection": ("movement", ("p1", "p2", "p3")),
}


def expand_demand(g: ConflictGraph, kind: str, vector) -> dict[str, float]:
    """Per-movement demand (same unit as ``vector``) from a scenario's base vector.

    A mapping is taken as explicit per-movement values.
    """
    if isinstance(vector, dict):
        missing = set(g.movement_ids) - set(vector)
        if missing:
            raise ValueError(f"demand missing for movements {sorted(missing)}")
        return {p: float(vector[p]) for p in g.movement_ids}
    if kind not in DEMAND_LAYOUTS:
        raise ValueError(f"no demand layout for scenario {kind!r}")
    mode, labels = DEMAND_LAYOUTS[kind]
    vector = [float(v) for v in vector]
    if len(vector) != len(labels):
        raise ValueError(f"{kind} expects {len(labels)} demand entries {list(labels)}, got {len(vector)}")
    out = {}
    for p in g.movements:
        if mode == "movement":
            label = p.id
        elif mode == "suffix":
            label = p.id.rsplit("-", 1)[-1]
        else:
            label = p.kind
        out[p.id] = vector[labels.index(label)]
    return dict(sorted(out.items()))
