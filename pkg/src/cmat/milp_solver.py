"""Solving the scheduling MILPs.

``solve`` runs a deterministic branch-and-bound over LP relaxations (the LPs
go to the simplex in :mod:`cmat.lp` or to HiGHS ``linprog``), or hands the
whole MILP to HiGHS through ``scipy.optimize.milp``.  ``enumerate_oracle``
certifies small instances by brute force and ``feasible_start`` builds the
unit-platoon schedule that witnesses feasibility of the relaxed model.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from .conflict_graph import ConflictGraph, travel_times
from .lp import INFEASIBLE, OPTIMAL, solve_lp
from .model import (
    CONTINUOUS,
    CmatParameters,
    MilpInstance,
    MovementDemand,
    build_model,
    check_m2_precondition,
    muted_set,
)

LIMIT_REACHED = "limit_reached"
ORACLE_MAX_NODES = 3
ORACLE_MAX_PLATOON = 12


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-6
    int_tol: float = 1e-6
    gap_tol: float = 1e-9
    node_limit: int | None = None
    time_limit: float | None = None
    backend: str = "bnb"  # "bnb" or "highs"
    lp_method: str = "simplex"  # LP routine inside branch-and-bound

    def __post_init__(self):
        if self.backend not in ("bnb", "highs"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.lp_method not in ("simplex", "highs"):
            raise ValueError(f"unknown lp_method {self.lp_method!r}")


@dataclass
class SolveStats:
    nodes: int = 0
    wall_time: float = 0.0
    lp_iterations: int = 0
    lower_bound: float = -math.inf
    incumbents: list[float] = field(default_factory=list)


@dataclass
class MilpSolution:
    status: str
    objective: float = math.inf
    x: np.ndarray | None = None
    values: dict[tuple, float] = field(default_factory=dict)
    stats: SolveStats = field(default_factory=SolveStats)
    backend: str = ""

    def __getitem__(self, role: tuple) -> float:
        return self.values[role]

    @property
    def has_solution(self) -> bool:
        return self.x is not None


def solution_at(inst: MilpInstance, x, status: str = LIMIT_REACHED, backend: str = "given") -> MilpSolution:
    """Wrap a known point of ``inst`` as a solution (no search is run)."""
    return _package(inst, status, x, SolveStats(), backend)


def _package(inst: MilpInstance, status: str, x, stats: SolveStats, backend: str) -> MilpSolution:
    if x is None:
        return MilpSolution(status, math.inf, None, {}, stats, backend)
    x = np.asarray(x, dtype=float).copy()
    mask = inst.integer_mask()
    x[mask] = np.round(x[mask])
    values = {role: float(x[i]) for role, i in inst.roles.items()}
    return MilpSolution(status, inst.objective_value(x), x, values, stats, backend)


class _Relaxation:
    """LP relaxation of one instance with per-node variable bounds."""

    def __init__(self, inst: MilpInstance, method: str):
        self.c = inst.cost()
        a, self.lo, self.hi = inst.matrix()
        self.a = a.toarray() if method == "simplex" else a
        self.method = method
        self.iterations = 0

    def __call__(self, lb, ub):
        res = solve_lp(self.c, self.a, self.lo, self.hi, lb, ub, self.method)
        self.iterations += res.iterations
        return res


def _polish(relax: _Relaxation, x, mask, lb, ub):
    """Re-solve the continuous part with integers fixed at their rounded values."""
    lb, ub = lb.copy(), ub.copy()
    fixed = np.round(x[mask])
    lb[mask] = fixed
    ub[mask] = fixed
    res = relax(lb, ub)
    return res.x if res.status == OPTIMAL else x


def _branch_and_bound(inst: MilpInstance, opts: SolveOptions, start=None) -> MilpSolution:
    t0 = time.perf_counter()
    stats = SolveStats()
    relax = _Relaxation(inst, opts.lp_method)
    mask = inst.integer_mask()
    int_idx = np.flatnonzero(mask)
    lb0, ub0 = inst.bounds()
    best_x, best_f = None, math.inf

    if start is not None:
        start = np.asarray(start, dtype=float)
        if not inst.violations(start, opts.feas_tol):
            best_x, best_f = start.copy(), inst.objective_value(start)
            stats.incumbents.append(best_f)

    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    counter = itertools.count()
    node = (lb0.copy(), ub0.copy())
    hit_limit = False
    while True:
        if node is None:
            # best-bound backtrack, dropping nodes the incumbent already dominates
            while heap and heap[0][0] >= best_f - opts.gap_tol:
                heapq.heappop(heap)
            if not heap:
                break
            _, _, lb, ub = heapq.heappop(heap)
            node = (lb, ub)
        if opts.node_limit is not None and stats.nodes >= opts.node_limit:
            hit_limit = True
            break
        if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            hit_limit = True
            break
        lb, ub = node
        node = None
        stats.nodes += 1
        res = relax(lb, ub)
        if res.status != OPTIMAL or res.fun >= best_f - opts.gap_tol:
            continue
        x = res.x
        frac = np.abs(x[int_idx] - np.round(x[int_idx]))
        frac = np.where(frac > opts.int_tol, np.round(np.minimum(frac, 1 - frac), 12), -1.0)
        if int_idx.size == 0 or frac.max() < 0:
            cand = _polish(relax, x, mask, lb, ub)
            f = inst.objective_value(cand)
            if f < best_f:
                best_x, best_f = cand, f
                stats.incumbents.append(f)
            continue
        j = int(int_idx[int(np.argmax(frac))])  # most fractional, lowest index on ties
        down_ub, up_lb = ub.copy(), lb.copy()
        down_ub[j] = math.floor(x[j])
        up_lb[j] = math.ceil(x[j])
        down, up = (lb, down_ub), (up_lb, ub)
        first, second = (up, down) if x[j] - math.floor(x[j]) >= 0.5 else (down, up)
        heapq.heappush(heap, (res.fun, next(counter), *second))
        node = first  # keep diving

    stats.wall_time = time.perf_counter() - t0
    stats.lp_iterations = relax.iterations
    open_bounds = [h[0] for h in heap if h[0] < best_f - opts.gap_tol]
    if hit_limit:
        stats.lower_bound = min(open_bounds + [best_f])
        status = LIMIT_REACHED
    else:
        stats.lower_bound = best_f
        status = OPTIMAL if best_x is not None else INFEASIBLE
    return _package(inst, status, best_x, stats, f"bnb/{opts.lp_method}")


def _solve_highs(inst: MilpInstance, opts: SolveOptions, start=None) -> MilpSolution:
    t0 = time.perf_counter()
    c = inst.cost()
    a, lo, hi = inst.matrix()
    lb, ub = inst.bounds()
    mask = inst.integer_mask()
    options = {"mip_rel_gap": opts.gap_tol}
    if opts.time_limit is not None:
        options["time_limit"] = float(opts.time_limit)
    if opts.node_limit is not None:
        options["node_limit"] = int(opts.node_limit)
    res = milp(
        c,
        constraints=LinearConstraint(a, lo, hi),
        integrality=mask.astype(int),
        bounds=Bounds(lb, ub),
        options=options,
    )
    stats = SolveStats(nodes=int(getattr(res, "mip_node_count", 0) or 0))
    stats.lower_bound = float(getattr(res, "mip_dual_bound", -math.inf) or -math.inf)
    x = None
    if res.x is not None:
        relax = _Relaxation(inst, "highs")
        x = _polish(relax, np.asarray(res.x), mask, lb, ub)
        stats.incumbents.append(inst.objective_value(x))
    stats.wall_time = time.perf_counter() - t0
    if res.status == 0:
        status = OPTIMAL
    elif res.status == 2:
        status = INFEASIBLE
    else:
        status = LIMIT_REACHED
    # HiGHS takes no starting point through scipy, so a supplied one only
    # competes with whatever incumbent the limited search returned
    if status == LIMIT_REACHED and start is not None:
        start = np.asarray(start, dtype=float)
        if not inst.violations(start, opts.feas_tol):
            if x is None or inst.objective_value(start) < inst.objective_value(x) - opts.feas_tol:
                x = start.copy()
                stats.incumbents.append(inst.objective_value(x))
    if status == OPTIMAL:
        stats.lower_bound = min(stats.lower_bound, inst.objective_value(x))
    return _package(inst, status, x, stats, "highs")


def solve(inst: MilpInstance, opts: SolveOptions | None = None, start=None) -> MilpSolution:
    """Minimise ``inst``; ``start`` is an optional incumbent (ignored if infeasible)."""
    opts = opts or SolveOptions()
    lb, ub = inst.bounds()
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError("every variable needs finite bounds")
    if opts.backend == "highs":
        return _solve_highs(inst, opts, start)
    return _branch_and_bound(inst, opts, start)


# ---------------------------------------------------------------------------
# brute-force oracle


def _fixed_choice_lp(
    g: ConflictGraph,
    demands: Mapping[str, float],
    params: CmatParameters,
    model: str,
    z: Mapping[str, int],
    platoons: Mapping[str, int],
    cycle: float | None,
    weights: tuple[float, float],
    service: str,
):
    """LP over timings once order bits, platoon sizes and (optionally) C are fixed.

    The conditional headway needs no linearisation here: with the order known,
    the gap is a plain difference of arrival times.
    """
    fp = params.flow
    tt = travel_times(g, fp.v_f)
    muted = muted_set(demands, params)
    ids = g.movement_ids
    lp = MilpInstance()
    c_lo, c_hi = (cycle, cycle) if cycle is not None else (0.0, params.c_max)
    C = lp.add_var(("C",), CONTINUOUS, c_lo, c_hi)
    occupancy = {p: (platoons[p] - 1) * fp.tau_f + platoons[p] * fp.pass_time for p in ids}
    for p in ids:
        green = platoons[p] / params.q_max
        g_lo, g_hi = (0.0, params.c_max) if p in muted else (green, green)
        lp.add_var(("r", p), CONTINUOUS, 0.0, params.c_max)
        lp.add_var(("g", p), CONTINUOUS, g_lo, g_hi)
        lp.add_var(("t_off", p), CONTINUOUS, 0.0, (len(ids) - 1) * params.c_max)
        for n in g.movement(p).nodes:
            lp.add_var(("t_arr", p, n), CONTINUOUS, 0.0, np.inf)
    for n, _, _ in g.node_pairs():
        lp.add_var(("tau_lo", n), CONTINUOUS, fp.tau_c, params.c_max)
        lp.add_var(("tau_hi", n), CONTINUOUS, fp.tau_c, params.c_max)
    r = lp.roles
    for p in ids:
        lp.add_row({C: 1, r["r", p]: -1, r["g", p]: -1}, "=", 0.0)
        if p not in muted:
            q = demands[p]
            if model == "m1":
                lp.add_row({C: q}, "=", platoons[p])
            elif service == "cap":
                lp.add_row({C: q}, ">=", platoons[p])
        for n in g.movement(p).nodes:
            lp.add_row({r["t_arr", p, n]: 1, r["t_off", p]: -1, r["r", p]: -1}, "=", tt[(p, n)])
    for n, p1, p2 in g.node_pairs():
        first, second = (p1, p2) if z[n] else (p2, p1)
        # tau_lo = start of the later platoon - end of the earlier one
        lp.add_row(
            {r["tau_lo", n]: 1, r["t_arr", second, n]: -1, r["t_arr", first, n]: 1},
            "=", -occupancy[first],
        )
        lp.add_row({C: 1, r["tau_lo", n]: -1, r["tau_hi", n]: -1}, "=", occupancy[p1] + occupancy[p2])
    lp.objective[C] = weights[0]
    lb, ub = lp.bounds()
    a, lo, hi = lp.matrix()
    return lp, (lp.cost(), a, lo, hi, lb, ub), occupancy


def _lift(inst: MilpInstance, lp: MilpInstance, y, z, platoons, occupancy) -> np.ndarray:
    """Map an oracle LP point onto the full model's variables, products included."""
    vals = {role: y[i] for role, i in lp.roles.items()}
    for p, size in platoons.items():
        vals[("L", p)] = size
        vals[("T", p)] = occupancy[p]
    for n, p1, p2 in inst.meta["pairs"]:
        vals[("z", n)] = z[n]
        vals[("x_lo", n)] = z[n] * vals[("t_arr", p1, n)]
        vals[("x_hi", n)] = z[n] * vals[("t_arr", p2, n)]
        vals[("y_lo", n)] = z[n] * occupancy[p1]
        vals[("y_hi", n)] = z[n] * occupancy[p2]
    return inst.assignment(vals)


def enumerate_oracle(
    g: ConflictGraph,
    demands: Mapping[str, float],
    params: CmatParameters,
    model: str = "m1",
    lp_method: str = "simplex",
    service: str = "cap",
) -> MilpSolution:
    """Exhaustive search over order bits and platoon sizes, one LP per choice.

    For M1 the cycle is enumerated over common multiples of the unmuted
    arrival headways, which is complete because queue clearance forces
    ``q_p C`` to be an integer.  For M2 every platoon vector with entries up to
    twelve is tried.  Choices are visited in order of a valid lower bound on
    their objective, so the search stops as soon as no remaining choice can
    improve on the best LP value.
    """
    t0 = time.perf_counter()
    if model not in ("m1", "m2"):
        raise ValueError(f"unknown model {model!r}")
    inst = build_model(g, demands, params, model, m2_service=service)
    demands = MovementDemand(inst.meta["demands"])
    pairs = inst.meta["pairs"]
    if len(pairs) > ORACLE_MAX_NODES:
        raise ValueError(f"oracle handles at most {ORACLE_MAX_NODES} conflict points, got {len(pairs)}")
    fp = params.flow
    ids = g.movement_ids
    muted = muted_set(demands, params)
    unmuted = [p for p in ids if p not in muted]
    w_c, w_l = (params.lam, 1 - params.lam) if model == "m1" else (1 - params.lam, params.lam)

    def occ(size):
        return (size - 1) * fp.tau_f + size * fp.pass_time

    # (bound, cycle or None, platoons)
    choices: list[tuple[float, float | None, dict[str, int]]] = []
    if model == "m1":
        if unmuted:
            p0 = unmuted[0]
            for k in range(1, int(math.floor(params.c_max * demands[p0] + 1e-9)) + 1):
                cyc = k / demands[p0]
                sizes = {p: 1 for p in muted}
                ok = True
                for p in unmuted:
                    size = demands[p] * cyc
                    if abs(size - round(size)) > 1e-6 or not 1 <= round(size) <= params.l_max:
                        ok = False
                        break
                    sizes[p] = int(round(size))
                if ok:
                    choices.append((w_c * cyc - w_l * sum(sizes.values()), cyc, sizes))
        else:
            choices.append((-math.inf, None, {p: 1 for p in ids}))
    else:
        caps = []
        for p in unmuted:
            cap = params.l_max
            if service == "cap":
                cap = min(cap, int(math.floor(params.c_max * demands[p] + 1e-9)))
            if cap > ORACLE_MAX_PLATOON:
                raise ValueError(
                    f"oracle caps platoons at {ORACLE_MAX_PLATOON}; movement {p} allows {cap}"
                )
            caps.append(range(1, max(cap, 1) + 1))
        for combo in itertools.product(*caps):
            sizes = {p: 1 for p in muted} | dict(zip(unmuted, combo))
            c_lb = max(
                [2 * fp.tau_c + occ(sizes[p1]) + occ(sizes[p2]) for _, p1, p2 in pairs]
                + [sizes[p] / demands[p] for p in unmuted if service == "cap"]
                + [sizes[p] / params.q_max for p in ids]
            )
            choices.append((w_c * c_lb - w_l * sum(sizes.values()), None, sizes))
    choices.sort(key=lambda ch: (ch[0], -1 if ch[1] is None else ch[1], tuple(sorted(ch[2].items()))))

    stats = SolveStats()
    best_f, best_x = math.inf, None
    nodes = [n for n, _, _ in pairs]
    for bound, cyc, sizes in choices:
        if bound > best_f + 1e-9:
            break
        for bits in itertools.product((1, 0), repeat=len(nodes)):
            z = dict(zip(nodes, bits))
            lp, args, occupancy = _fixed_choice_lp(
                g, demands, params, model, z, sizes, cyc, (w_c, w_l), service
            )
            res = solve_lp(*args, method=lp_method)
            stats.nodes += 1
            stats.lp_iterations += res.iterations
            if res.status != OPTIMAL:
                continue
            f = res.fun - w_l * sum(sizes.values())
            if f < best_f - 1e-9:
                best_f = f
                best_x = _lift(inst, lp, res.x, z, sizes, occupancy)
                stats.incumbents.append(f)
    stats.wall_time = time.perf_counter() - t0
    stats.lower_bound = best_f
    status = OPTIMAL if best_x is not None else INFEASIBLE
    return _package(inst, status, best_x, stats, f"oracle/{lp_method}")


# ---------------------------------------------------------------------------
# constructive feasible point of the relaxed model


class FeasibleStartError(ValueError):
    pass


def feasible_start(
    g: ConflictGraph, demands: Mapping[str, float], params: CmatParameters
) -> dict[tuple, float]:
    """Unit-platoon schedule satisfying every constraint of the relaxed model.

    Every movement sends one vehicle per cycle (L = 1, g = 1/q_max), the
    alphabetically first movement passes each conflict point first, and
    ``C = max(2 tau_c + 2 l/v_f, max_p 1/q_p)``.  Offsets come from walking a
    spanning tree of the movement-pair graph so that each tree conflict point
    has its first headway exactly ``tau_c``.  If the graph has cycles whose
    remaining conflict points fall outside the admissible window, the offsets
    are recomputed from the full system of difference constraints.  When that
    system has no solution at the shortest cycle (long links around a cycle of
    the graph), the cycle is lengthened by bisection up to ``c_max``; the
    headway windows only widen as C grows.
    """
    ids = g.movement_ids
    missing = [p for p in ids if p not in demands]
    if missing:
        raise ValueError(f"missing demand for movements {missing}")
    demands = MovementDemand({p: demands[p] for p in ids}).clamped(params.q_max)
    pre = check_m2_precondition(demands, params)
    if not pre.ok:
        raise FeasibleStartError(f"precondition violated: {pre.reason}")
    fp = params.flow
    occ = fp.pass_time  # T_p for a single vehicle
    green = 1.0 / params.q_max
    headways = [1.0 / q for q in demands.values() if q > 0]
    cycle = max([2 * fp.tau_c + 2 * fp.pass_time, *headways])
    red = cycle - green
    tt = travel_times(g, fp.v_f)
    pairs = g.node_pairs()

    # t_off[p2] - t_off[p1] = tau_c + T + tt[p1,n] - tt[p2,n] makes tau_lo = tau_c
    def target(n, p1, p2):
        return fp.tau_c + occ + tt[(p1, n)] - tt[(p2, n)]

    adjacency: dict[str, list[tuple[str, float]]] = {p: [] for p in ids}
    for n, p1, p2 in pairs:
        d = target(n, p1, p2)
        adjacency[p1].append((p2, d))
        adjacency[p2].append((p1, -d))
    offset: dict[str, float] = {}
    for root in ids:
        if root in offset:
            continue
        offset[root] = 0.0
        component = [root]
        queue = deque([root])
        while queue:
            p = queue.popleft()
            for nb, d in sorted(adjacency[p]):
                if nb not in offset:
                    offset[nb] = offset[p] + d
                    component.append(nb)
                    queue.append(nb)
        shift = -min(offset[p] for p in component)
        for p in component:
            offset[p] += shift

    def window(c):  # slack allowed in tau_lo above tau_c
        return c - 2 * fp.tau_c - 2 * occ

    def admissible(off):
        for n, p1, p2 in pairs:
            gap = off[p2] - off[p1] - target(n, p1, p2)
            if gap < -1e-9 or gap > window(cycle) + 1e-9:
                return False
        return True

    if not admissible(offset):
        try:
            offset = _difference_offsets(ids, pairs, target, window(cycle))
        except FeasibleStartError:
            if cycle >= params.c_max:
                raise
            offset = _difference_offsets(ids, pairs, target, window(params.c_max))
            lo, hi = cycle, params.c_max
            while hi - lo > 1e-3:
                mid = 0.5 * (lo + hi)
                try:
                    offset = _difference_offsets(ids, pairs, target, window(mid))
                    hi = mid
                except FeasibleStartError:
                    lo = mid
            cycle = hi
            red = cycle - green
    if max(offset.values()) > (len(ids) - 1) * params.c_max + 1e-9:
        raise FeasibleStartError("offsets exceed their upper bound")

    vals: dict[tuple, float] = {("C",): cycle}
    for p in ids:
        vals[("r", p)] = red
        vals[("g", p)] = green
        vals[("L", p)] = 1.0
        vals[("t_off", p)] = offset[p]
        vals[("T", p)] = occ
        for n in g.movement(p).nodes:
            vals[("t_arr", p, n)] = offset[p] + red + tt[(p, n)]
    for n, p1, p2 in pairs:
        t1, t2 = vals[("t_arr", p1, n)], vals[("t_arr", p2, n)]
        lo = t2 - t1 - occ
        vals[("tau_lo", n)] = lo
        vals[("tau_hi", n)] = cycle - lo - 2 * occ
        vals[("z", n)] = 1.0
        vals[("x_lo", n)] = t1
        vals[("x_hi", n)] = t2
        vals[("y_lo", n)] = occ
        vals[("y_hi", n)] = occ
    return vals


def _difference_offsets(ids, pairs, target, window) -> dict[str, float]:
    """Bellman-Ford on ``target <= t_off[p2] - t_off[p1] <= target + window``."""
    index = {p: k for k, p in enumerate(ids)}
    edges = []  # (u, v, w): x_v - x_u <= w
    for n, p1, p2 in pairs:
        d = target(n, p1, p2)
        edges.append((index[p1], index[p2], d + window))
        edges.append((index[p2], index[p1], -d))
    dist = np.zeros(len(ids))  # virtual source at distance 0 to all
    for _ in range(len(ids)):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v] - 1e-12:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    else:
        if any(dist[u] + w < dist[v] - 1e-9 for u, v, w in edges):
            raise FeasibleStartError("unit-platoon offsets are infeasible at this cycle length")
    dist -= dist.min()
    return {p: float(dist[index[p]]) for p in ids}
