"""Discrete-event simulation of stop-line gating for any controller.

Vehicles arrive at the entrance of their movement, wait in a FIFO queue and
leave the stop line only at instants the controller allows: the platoon
slots of a cyclic schedule, or saturation-headway departures inside green
windows of a signal plan.  Between stop lines vehicles cruise at the
free-flow speed, so only waiting counts as delay.

Simultaneous events are processed departures first, then arrivals, then by
movement id.  A vehicle therefore cannot take a departure slot that opens at
the very instant it arrives.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .baselines import SignalPlan, lane_key, movement_sites
from .conflict_graph import ConflictGraph, travel_times
from .model import CmatParameters
from .schedule import CyclicSchedule

log = logging.getLogger(__name__)

TIE = 1e-9
DEPART, ARRIVE = 0, 1


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 3600.0
    warmup: float = 120.0
    arrivals: str = "deterministic"  # or "poisson"
    seed: int = 0

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.arrivals not in ("deterministic", "poisson"):
            raise ValueError(f"unknown arrival model {self.arrivals!r}")


@dataclass
class MovementMetrics:
    arrived: int = 0
    completed: int = 0
    in_transit: int = 0
    queued: int = 0
    throughput_vph: float = 0.0
    mean_delay: float = 0.0
    max_queue: int = 0


@dataclass
class SimMetrics:
    """Throughput counts completions inside ``[warmup, horizon]``; delay is the
    mean stop-line wait of those completed vehicles; ``residual_queue`` is the
    number still waiting at a stop line at the horizon."""

    throughput_vph: float
    mean_delay: float
    max_queue: int
    residual_queue: int
    per_movement: dict[str, MovementMetrics] = field(default_factory=dict)

    @property
    def arrived(self) -> int:
        return sum(m.arrived for m in self.per_movement.values())


@dataclass(frozen=True)
class VehicleRecord:
    """One simulated vehicle; ``departure`` is its first stop-line departure (inf if none)."""

    movement: str
    arrival: float
    departure: float
    completion: float


class _SlotServer:
    """Departures only at discrete periodic slots ``base + m*C + j*h``, j < L."""

    def __init__(self, base: float, cycle: float, count: int, headway: float):
        self.base, self.cycle, self.count, self.headway = base, cycle, count, headway

    def next_time(self, t: float) -> float:
        m = math.floor((t - self.base) / self.cycle)
        for k in (m - 1, m, m + 1):
            for j in range(self.count):
                s = self.base + k * self.cycle + j * self.headway
                if s >= t - 1e-12:
                    return s
        return self.base + (m + 2) * self.cycle


class _GreenServer:
    """Departures at saturation headway whenever a green window is open."""

    def __init__(self, windows: Sequence[tuple[float, float]], cycle: float, headway: float):
        self.windows = sorted(windows)
        self.cycle, self.headway = cycle, headway

    def next_time(self, t: float) -> float:
        m = math.floor(t / self.cycle)
        for k in (m - 1, m, m + 1):
            for a, b in self.windows:
                a, b = a + k * self.cycle, b + k * self.cycle
                if t < b - 1e-12:
                    return max(t, a)
        return self.windows[0][0] + (m + 2) * self.cycle


@dataclass
class _Queue:
    server: object
    headway: float
    waiting: deque = field(default_factory=deque)
    last: float = -math.inf
    busy: bool = False


def _arrival_times(q: float, horizon: float, cfg: SimConfig, stream: int) -> np.ndarray:
    if q <= 0:
        return np.empty(0)
    if cfg.arrivals == "deterministic":
        return np.arange(0, int(math.ceil(horizon * q)) + 1) / q
    rng = np.random.default_rng([cfg.seed, stream])
    n = int(horizon * q + 10 * math.sqrt(horizon * q) + 10)
    t = np.cumsum(rng.exponential(1.0 / q, size=n))
    while t[-1] < horizon:
        t = np.concatenate([t, t[-1] + np.cumsum(rng.exponential(1.0 / q, size=n))])
    return t


def _routes_schedule(s: CyclicSchedule, g: ConflictGraph, params: CmatParameters):
    """Single stop at the entrance; completion after the last conflict point."""
    fp = params.flow
    tt = travel_times(g, fp.v_f)
    h = 1.0 / params.q_max
    queues, routes = {}, {}
    for p in g.movement_ids:
        if p not in s.movements:
            raise ValueError(f"schedule has no timing for movement {p}")
        m = s.movements[p]
        queues[p] = _Queue(_SlotServer(m.t_off + m.r, s.C, m.L, h), h)
        last = g.movement(p).nodes[-1]
        routes[p] = [(p, tt[(p, last)] + fp.pass_time)]
    return queues, routes


def _routes_plan(plan: SignalPlan, g: ConflictGraph, params: CmatParameters):
    """One stop per intersection; shared lanes form one queue."""
    fp = params.flow
    tt = travel_times(g, fp.v_f)
    h = 1.0 / params.q_max
    links = [length for (a, b), length in g.arcs.items() if g.node_site.get(a) != g.node_site.get(b)]
    link_time = (max(links) / fp.v_f) if links else 0.0
    queues, routes = {}, {}
    for p in g.movement_ids:
        mv = g.movement(p)
        sites = movement_sites(g, p)
        first_at = {}
        last_at = {}
        for n in mv.nodes:
            site = g.node_site.get(n, sites[0])
            first_at.setdefault(site, tt[(p, n)])
            last_at[site] = tt[(p, n)]
        route = []
        for k, site in enumerate(sites):
            key = lane_key(g, p, site)
            if key not in queues:
                if site not in plan.phases:
                    raise ValueError(f"signal plan has no phases for intersection {site!r}")
                members = [
                    other for other in g.movement_ids
                    if site in movement_sites(g, other) and lane_key(g, other, site) == key
                ]
                windows = sorted({w for other in members for w in plan.green_windows(site, other)})
                if not windows:
                    raise ValueError(f"movement {p} never gets green at {site}")
                queues[key] = _Queue(_GreenServer(windows, plan.cycle, h), h)
            if k + 1 < len(sites):
                nxt = sites[k + 1]
                if site in first_at and nxt in first_at:
                    leg = first_at[nxt] - first_at[site]
                else:
                    leg = link_time
            else:
                leg = (last_at[site] - first_at[site] if site in first_at else 0.0) + fp.pass_time
            route.append((key, leg))
        routes[p] = route
    return queues, routes


def simulate(
    controller: CyclicSchedule | SignalPlan,
    g: ConflictGraph,
    demands: Mapping[str, float],
    cfg: SimConfig | None = None,
    params: CmatParameters | None = None,
    trace: list | None = None,
) -> SimMetrics:
    """Run one controller for ``cfg.horizon`` seconds; demands in veh/s.

    When ``trace`` is a list, one ``VehicleRecord`` per generated vehicle is
    appended to it in arrival order per movement.
    """
    cfg = cfg or SimConfig()
    if isinstance(controller, CyclicSchedule):
        params = controller.params
        queues, routes = _routes_schedule(controller, g, params)
    elif isinstance(controller, SignalPlan):
        params = params or CmatParameters()
        missing = set(g.movement_ids) - controller.served()
        if missing:
            raise ValueError(f"signal plan serves no phase for {sorted(missing)}")
        queues, routes = _routes_plan(controller, g, params)
    else:
        raise TypeError(f"unsupported controller {type(controller).__name__}")
    ids = g.movement_ids
    for p in ids:
        if p not in demands:
            raise ValueError(f"missing demand for movement {p}")

    rank = {p: k for k, p in enumerate(ids)}
    heap: list = []
    seq = itertools.count()
    # vehicle: movement, stop index, entrance arrival, arrival at current stop, waited, done time, state,
    # first departure
    vehicles: list[list] = []
    for k, p in enumerate(ids):
        for t in _arrival_times(demands[p], cfg.horizon, cfg, k):
            if t >= cfg.horizon:
                break
            vid = len(vehicles)
            vehicles.append([p, 0, float(t), float(t), 0.0, math.inf, "queued", math.inf])
            heapq.heappush(heap, (float(t), ARRIVE, rank[p], next(seq), vid))

    waiting = {p: 0 for p in ids}
    max_queue = {p: 0 for p in ids}

    def schedule_service(key, now):
        qu = queues[key]
        head = vehicles[qu.waiting[0]]
        t = qu.server.next_time(max(now, qu.last + qu.headway - 1e-12, head[3] + TIE))
        qu.busy = True
        heapq.heappush(heap, (t, DEPART, rank[head[0]], next(seq), key))

    while heap:
        t, kind, _, _, item = heapq.heappop(heap)
        if t >= cfg.horizon:
            break
        if kind == ARRIVE:
            v = vehicles[item]
            key = routes[v[0]][v[1]][0]
            v[3] = t
            v[6] = "queued"
            qu = queues[key]
            qu.waiting.append(item)
            waiting[v[0]] += 1
            if t >= cfg.warmup:
                max_queue[v[0]] = max(max_queue[v[0]], waiting[v[0]])
            if not qu.busy:
                schedule_service(key, t)
            continue
        qu = queues[item]
        qu.busy = False
        if not qu.waiting:
            continue
        vid = qu.waiting.popleft()
        v = vehicles[vid]
        p = v[0]
        waiting[p] -= 1
        qu.last = t
        v[4] += t - v[3]
        if v[1] == 0:
            v[7] = t
        leg = routes[p][v[1]][1]
        v[1] += 1
        if v[1] < len(routes[p]):
            heapq.heappush(heap, (t + leg, ARRIVE, rank[p], next(seq), vid))
        else:
            v[5] = t + leg
        v[6] = "moving"
        if qu.waiting:
            schedule_service(item, t)

    if trace is not None:
        trace.extend(VehicleRecord(v[0], v[2], v[7], v[5]) for v in vehicles)
    per = {}
    done_all, delay_all = 0, 0.0
    residual = 0
    for p in ids:
        per[p] = MovementMetrics()
    for v in vehicles:
        mm = per[v[0]]
        mm.arrived += 1
        if v[5] <= cfg.horizon:
            mm.completed += 1
            if v[5] >= cfg.warmup:
                mm.throughput_vph += 1
                mm.mean_delay += v[4]
        elif v[6] == "moving":
            mm.in_transit += 1
        else:
            mm.queued += 1
    span = cfg.horizon - cfg.warmup
    for p, mm in per.items():
        n = mm.throughput_vph
        done_all += n
        delay_all += mm.mean_delay
        mm.mean_delay = mm.mean_delay / n if n else 0.0
        mm.throughput_vph = n * 3600.0 / span
        mm.max_queue = max_queue[p]
        residual += mm.queued
    return SimMetrics(
        throughput_vph=done_all * 3600.0 / span,
        mean_delay=delay_all / done_all if done_all else 0.0,
        max_queue=max(max_queue.values(), default=0),
        residual_queue=residual,
        per_movement=per,
    )



# ---------------------------------------------------------------------------
# controllers and load sweeps


@dataclass
class ControllerRun:
    """A controller built for one demand level, with what the sweep reports about it."""

    controller: CyclicSchedule | SignalPlan
    model_used: str = "n/a"  # "M1", "M2" or "n/a"
    cycle: float = math.nan
    platoon_sizes: dict[str, int] = field(default_factory=dict)
    tsc_feasible: bool | None = None
    safety_ok: bool | None = None
    solver_status: str = ""
    incumbent: dict | None = None  # solver point by role, when a model was solved


@dataclass
class SweepRow:
    beta: float
    demand_total_vph: float
    metrics: SimMetrics | None
    run: ControllerRun | None
    error: str = ""


def _run_row(factory, g, base, beta, cfg) -> SweepRow:
    demands = {p: beta * q for p, q in base.items()}
    total = sum(demands.values()) * 3600.0
    t0 = time.perf_counter()
    try:
        run = factory(demands)
        metrics = simulate(run.controller, g, demands, cfg, getattr(factory, "params", None))
    except Exception as exc:  # recorded per row, the sweep goes on
        log.warning("beta=%g failed: %s: %s", beta, type(exc).__name__, exc)
        return SweepRow(beta, total, None, None, f"{type(exc).__name__}: {exc}")
    log.info(
        "%s beta=%g model=%s cycle=%.4g throughput=%.1f (%.1f s)",
        type(factory).__name__, beta, run.model_used, run.cycle, metrics.throughput_vph, time.perf_counter() - t0,
    )
    return SweepRow(beta, total, metrics, run)


def capacity_sweep(
    factory: Callable[[Mapping[str, float]], ControllerRun],
    g: ConflictGraph,
    base_demand: Mapping[str, float],
    betas: Sequence[float],
    cfg: SimConfig | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Build and simulate one controller per load level ``beta * base_demand``.

    Rows are independent; with ``workers > 1`` they run in a process pool and
    come back in ``betas`` order.
    """
    betas = list(betas)
    if betas != sorted(betas):
        raise ValueError("betas must be sorted ascending")
    cfg = cfg or SimConfig()
    if workers <= 1:
        rows = [_run_row(factory, g, base_demand, b, cfg) for b in betas]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_row, factory, g, dict(base_demand), b, cfg) for b in betas]
            rows = [f.result() for f in futures]
    if hasattr(factory, "refine"):
        _refine_rows(factory, g, base_demand, rows, cfg)
    return rows


def _refine_rows(factory, g, base, rows: list[SweepRow], cfg: SimConfig) -> None:
    """Offer each row the best controller found at lower load, in ascending order.

    Runs after all rows are back, so the outcome does not depend on how rows
    were spread over workers.  ``factory.refine(run, demands, earlier)``
    returns a better run or None.
    """
    earlier = None
    for i, row in enumerate(rows):
        if row.run is None:
            continue
        if earlier is not None:
            demands = {p: row.beta * q for p, q in base.items()}
            better = factory.refine(row.run, demands, earlier)
            if better is not None:
                try:
                    metrics = simulate(better.controller, g, demands, cfg, getattr(factory, "params", None))
                except Exception as exc:  # keep the row's own result
                    log.warning("beta=%g refinement not simulated: %s", row.beta, exc)
                else:
                    log.info("beta=%g takes the lower-load incumbent (cycle %.4g)", row.beta, better.cycle)
                    rows[i] = SweepRow(row.beta, row.demand_total_vph, metrics, better)
        earlier = rows[i].run


def switch_beta(rows: Sequence[SweepRow]) -> float | None:
    """First load level solved with the relaxed model, or None."""
    for row in rows:
        if row.run is not None and row.run.model_used == "M2":
            return row.beta
    return None


def plateau(rows: Sequence[SweepRow], last: int = 3) -> float:
    """Saturated throughput: median over the ``last`` highest load levels."""
    vals = [r.metrics.throughput_vph for r in rows if r.metrics is not None]
    if not vals:
        return math.nan
    return float(np.median(vals[-last:]))
