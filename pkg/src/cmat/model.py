"""Mixed-integer models for cyclic platoon scheduling on a conflict graph.

``build_m1`` emits the queue-clearing model, ``build_m2`` the relaxed
throughput model used under oversaturation.  The conditional headway
definition at each conflict point is linearised exactly with product
variables (x_lo = z*t_arr[p1], x_hi = z*t_arr[p2], y_lo = z*T[p1],
y_hi = z*T[p2]) and McCormick-style envelopes built from finite bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from .analytics import FlowParameters
from .conflict_graph import ConflictGraph, travel_times, validate_graph

log = logging.getLogger(__name__)

CONTINUOUS, INTEGER, BINARY = "continuous", "integer", "binary"
SENSES = ("<=", "=", ">=")


@dataclass(frozen=True)
class CmatParameters:
    flow: FlowParameters = field(default_factory=FlowParameters)
    tau_star: float = 10.0
    lam: float = 0.9
    c_max: float = 120.0

    def __post_init__(self):
        if not self.tau_star > 0:
            raise ValueError("tau_star must be positive")
        if not 0.5 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0.5, 1]")
        if not self.c_max > 0:
            raise ValueError("c_max must be positive")

    @property
    def q_max(self) -> float:
        return self.flow.q_max

    @property
    def l_max(self) -> int:
        """Largest platoon that fits in the longest cycle, floor(C_max * q_max)."""
        # guard against 119.99999 -> 119 from floating error
        return int(math.floor(self.c_max * self.q_max + 1e-9))


class MovementDemand(dict):
    """Per-movement arrival rate in veh/s."""

    @classmethod
    def from_vph(cls, flows: Mapping[str, float]) -> "MovementDemand":
        return cls({k: float(v) / 3600.0 for k, v in flows.items()})

    def vph(self) -> dict[str, float]:
        return {k: v * 3600.0 for k, v in self.items()}

    def scaled(self, beta: float) -> "MovementDemand":
        return MovementDemand({k: beta * v for k, v in self.items()})

    def clamped(self, q_max: float) -> "MovementDemand":
        out = MovementDemand(self)
        for k, v in self.items():
            if v < 0:
                raise ValueError(f"negative demand on movement {k}")
            if v > q_max:
                log.warning("demand %.4f veh/s on %s exceeds saturation %.4f; clamped", v, k, q_max)
                out[k] = q_max
        return out


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lb: float
    ub: float


@dataclass(frozen=True)
class Constraint:
    coefs: tuple[tuple[int, float], ...]
    sense: str
    rhs: float
    name: str = ""

    def activity(self, x) -> float:
        return sum(c * x[i] for i, c in self.coefs)


@dataclass
class MilpInstance:
    """A minimisation MILP with a role index from model symbols to variables.

    Roles are keyed by tuples such as ``("C",)``, ``("L", p)``,
    ``("t_arr", p, n)`` or ``("z", n)``.
    """

    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    roles: dict[tuple, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add_var(self, role: tuple, kind: str, lb: float, ub: float) -> int:
        if role in self.roles:
            raise ValueError(f"duplicate role {role}")
        if kind == BINARY:
            lb, ub = 0.0, 1.0
        name = role[0] if len(role) == 1 else f"{role[0]}[{','.join(role[1:])}]"
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        self.roles[role] = len(self.variables) - 1
        return self.roles[role]

    def add_row(self, coefs: Mapping[int, float], sense: str, rhs: float, name: str = "") -> None:
        if sense not in SENSES:
            raise ValueError(f"bad sense {sense}")
        merged: dict[int, float] = {}
        for i, c in coefs.items():
            merged[i] = merged.get(i, 0.0) + float(c)
        row = tuple(sorted((i, c) for i, c in merged.items() if c != 0.0))
        self.constraints.append(Constraint(row, sense, float(rhs), name))

    def __getitem__(self, role: tuple) -> int:
        return self.roles[role]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def integer_mask(self) -> np.ndarray:
        return np.array([v.kind != CONTINUOUS for v in self.variables])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return lb, ub

    def cost(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for i, v in self.objective.items():
            c[i] = v
        return c

    def matrix(self) -> tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
        """Rows as ``row_lb <= A x <= row_ub``."""
        rows, cols, vals = [], [], []
        lo = np.empty(len(self.constraints))
        hi = np.empty(len(self.constraints))
        for k, con in enumerate(self.constraints):
            for i, c in con.coefs:
                rows.append(k)
                cols.append(i)
                vals.append(c)
            lo[k] = con.rhs if con.sense in ("=", ">=") else -np.inf
            hi[k] = con.rhs if con.sense in ("=", "<=") else np.inf
        a = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), self.n_vars))
        return a, lo, hi

    def objective_value(self, x) -> float:
        return float(sum(c * x[i] for i, c in self.objective.items()))

    def violations(self, x, tol: float = 1e-6) -> list[str]:
        """Every bound, row and integrality violation of assignment ``x``."""
        out = []
        for i, v in enumerate(self.variables):
            if x[i] < v.lb - tol or x[i] > v.ub + tol:
                out.append(f"{v.name}={x[i]:.9g} outside [{v.lb:.9g}, {v.ub:.9g}]")
            if v.kind != CONTINUOUS and abs(x[i] - round(x[i])) > tol:
                out.append(f"{v.name}={x[i]:.9g} not integral")
        for con in self.constraints:
            act = con.activity(x)
            scale = max(1.0, abs(con.rhs))
            if con.sense == "<=" and act > con.rhs + tol * scale:
                out.append(f"{con.name}: {act:.9g} > {con.rhs:.9g}")
            elif con.sense == ">=" and act < con.rhs - tol * scale:
                out.append(f"{con.name}: {act:.9g} < {con.rhs:.9g}")
            elif con.sense == "=" and abs(act - con.rhs) > tol * scale:
                out.append(f"{con.name}: {act:.9g} != {con.rhs:.9g}")
        return out

    def assignment(self, roles: Mapping[tuple, float], default: float = 0.0) -> np.ndarray:
        x = np.full(self.n_vars, default)
        for role, value in roles.items():
            x[self.roles[role]] = value
        return x


@dataclass(frozen=True)
class VariableBounds:
    T_lb: dict[str, float]
    T_ub: dict[str, float]
    t_arr_lb: dict[tuple[str, str], float]
    t_arr_ub: dict[tuple[str, str], float]


def muted_set(demands: Mapping[str, float], params: CmatParameters) -> set[str]:
    """Movements whose mean arrival headway 1/q exceeds the threshold tau_star."""
    out = set()
    for p, q in demands.items():
        if q <= 0 or 1.0 / q > params.tau_star:
            out.add(p)
    return out


def variable_bounds(g: ConflictGraph, params: CmatParameters) -> VariableBounds:
    fp = params.flow
    n_max = params.l_max
    t_lb = fp.pass_time
    t_ub = (n_max - 1) * fp.tau_f + n_max * fp.pass_time
    arr_ub_base = len(g.movements) * params.c_max - 1.0 / params.q_max
    tt = travel_times(g, fp.v_f)
    ids = [p.id for p in g.movements]
    return VariableBounds(
        T_lb={p: t_lb for p in ids},
        T_ub={p: t_ub for p in ids},
        t_arr_lb={k: 0.0 for k in tt},
        t_arr_ub={k: arr_ub_base + t for k, t in tt.items()},
    )


@dataclass(frozen=True)
class PreconditionResult:
    ok: bool
    reason: str = ""

    def __bool__(self):
        return self.ok


def check_m2_precondition(demands: Mapping[str, float], params: CmatParameters) -> PreconditionResult:
    """Sufficient condition under which M2 always has a feasible point."""
    fp = params.flow
    headways = [1.0 / q for q in demands.values() if q > 0]
    c_min = max([2 * fp.tau_c + 2 * fp.pass_time, *headways])
    if params.c_max < c_min:
        return PreconditionResult(False, f"c_max {params.c_max:g} < required cycle {c_min:g}")
    limit = c_min - 1.0 / params.q_max
    if params.tau_star > limit:
        return PreconditionResult(False, f"tau_star {params.tau_star:g} > {limit:g}")
    return PreconditionResult(True)


def build_model(
    g: ConflictGraph,
    demands: Mapping[str, float],
    params: CmatParameters,
    model: str = "m1",
    fixed_platoon: int | None = None,
    objective: tuple[float, float] | None = None,
    m2_service: str = "cap",
) -> MilpInstance:
    """Shared builder behind ``build_m1``/``build_m2``.

    ``fixed_platoon`` pins every L_p (used by the unit-platoon baseline) and
    ``objective`` overrides the (weight on C, weight on -sum L) pair.

    In M2 the queue-clearing equality is dropped.  With ``m2_service="cap"``
    (default) it is kept as ``q_p (r_p + g_p) - L_p >= 0``, so a platoon never
    exceeds the vehicles that arrive in one cycle; ``"none"`` drops it entirely.
    Without the cap the throughput objective hands long platoons to a few
    movements irrespective of their arrivals.
    """
    if m2_service not in ("cap", "none"):
        raise ValueError(f"unknown m2_service {m2_service!r}")
    if model not in ("m1", "m2"):
        raise ValueError(f"unknown model {model!r}")
    report = validate_graph(g)
    if not report.ok:
        raise ValueError("invalid conflict graph: " + "; ".join(report.violations))
    missing = [p for p in g.movement_ids if p not in demands]
    if missing:
        raise ValueError(f"missing demand for movements {missing}")
    demands = MovementDemand({p: demands[p] for p in g.movement_ids}).clamped(params.q_max)

    fp = params.flow
    muted = muted_set(demands, params)
    bounds = variable_bounds(g, params)
    tt = travel_times(g, fp.v_f)
    ids = g.movement_ids
    c_max = params.c_max
    n_max = params.l_max

    inst = MilpInstance()
    inst.meta.update(
        model=model,
        muted=sorted(muted),
        movements=ids,
        pairs=g.node_pairs(),
        demands=dict(demands),
        params=params,
        fixed_platoon=fixed_platoon,
        m2_service=m2_service if model == "m2" else None,
    )
    C = inst.add_var(("C",), CONTINUOUS, 0.0, c_max)
    for p in ids:
        inst.add_var(("r", p), CONTINUOUS, 0.0, c_max)
        inst.add_var(("g", p), CONTINUOUS, 0.0, c_max)
        if fixed_platoon is not None:
            lo = hi = fixed_platoon
        elif p in muted:
            lo = hi = 1
        else:
            lo, hi = 1, n_max
        inst.add_var(("L", p), INTEGER, lo, hi)
        inst.add_var(("t_off", p), CONTINUOUS, 0.0, (len(ids) - 1) * c_max)
        inst.add_var(("T", p), CONTINUOUS, bounds.T_lb[p], bounds.T_ub[p])
    for p in ids:
        for n in g.movement(p).nodes:
            inst.add_var(("t_arr", p, n), CONTINUOUS, bounds.t_arr_lb[(p, n)], bounds.t_arr_ub[(p, n)])
    for n, p1, p2 in inst.meta["pairs"]:
        inst.add_var(("tau_lo", n), CONTINUOUS, fp.tau_c, c_max)
        inst.add_var(("tau_hi", n), CONTINUOUS, fp.tau_c, c_max)
        inst.add_var(("z", n), BINARY, 0, 1)
        inst.add_var(("x_lo", n), CONTINUOUS, 0.0, bounds.t_arr_ub[(p1, n)])
        inst.add_var(("x_hi", n), CONTINUOUS, 0.0, bounds.t_arr_ub[(p2, n)])
        inst.add_var(("y_lo", n), CONTINUOUS, 0.0, bounds.T_ub[p1])
        inst.add_var(("y_hi", n), CONTINUOUS, 0.0, bounds.T_ub[p2])

    r = inst.roles
    for n, p1, p2 in inst.meta["pairs"]:
        inst.add_row(
            {C: 1, r["tau_lo", n]: -1, r["tau_hi", n]: -1, r["T", p1]: -1, r["T", p2]: -1},
            "=", 0.0, f"cycle_conflict[{n}]",
        )
    for p in ids:
        inst.add_row({C: 1, r["r", p]: -1, r["g", p]: -1}, "=", 0.0, f"cycle_movement[{p}]")
        if p not in muted:
            inst.add_row({r["L", p]: 1, r["g", p]: -params.q_max}, "=", 0.0, f"platoon_size[{p}]")
            q = demands[p]
            if model == "m1":
                inst.add_row({r["r", p]: q, r["g", p]: q, r["L", p]: -1}, "=", 0.0, f"service_rate[{p}]")
            elif m2_service == "cap" and fixed_platoon is None:
                inst.add_row({r["r", p]: q, r["g", p]: q, r["L", p]: -1}, ">=", 0.0, f"service_cap[{p}]")
        inst.add_row(
            {r["T", p]: 1, r["L", p]: -(fp.tau_f + fp.pass_time)}, "=", -fp.tau_f, f"platoon_time[{p}]"
        )
        for n in g.movement(p).nodes:
            inst.add_row(
                {r["t_arr", p, n]: 1, r["t_off", p]: -1, r["r", p]: -1}, "=", tt[(p, n)], f"arrival[{p},{n}]"
            )
    for n, p1, p2 in inst.meta["pairs"]:
        z = r["z", n]
        inst.add_row(
            {
                r["tau_lo", n]: 1,
                r["t_arr", p1, n]: -1,
                r["t_arr", p2, n]: 1,
                r["T", p2]: 1,
                r["x_hi", n]: -2,
                r["x_lo", n]: 2,
                r["y_lo", n]: 1,
                r["y_hi", n]: -1,
            },
            "=", 0.0, f"headway[{n}]",
        )
        products = (
            ("x_lo", ("t_arr", p1, n), bounds.t_arr_lb[(p1, n)], bounds.t_arr_ub[(p1, n)]),
            ("x_hi", ("t_arr", p2, n), bounds.t_arr_lb[(p2, n)], bounds.t_arr_ub[(p2, n)]),
            ("y_lo", ("T", p1), bounds.T_lb[p1], bounds.T_ub[p1]),
            ("y_hi", ("T", p2), bounds.T_lb[p2], bounds.T_ub[p2]),
        )
        for sym, factor, lo, hi in products:
            w, v = r[sym, n], r[factor]
            inst.add_row({w: 1, z: -lo}, ">=", 0.0, f"rlt_{sym}_a[{n}]")
            inst.add_row({w: 1, z: -hi}, "<=", 0.0, f"rlt_{sym}_b[{n}]")
            inst.add_row({w: 1, v: -1, z: -hi}, ">=", -hi, f"rlt_{sym}_c[{n}]")
            inst.add_row({w: 1, v: -1, z: -lo}, "<=", -lo, f"rlt_{sym}_d[{n}]")

    if objective is None:
        objective = (params.lam, 1 - params.lam) if model == "m1" else (1 - params.lam, params.lam)
    w_c, w_l = objective
    inst.objective[C] = w_c
    for p in ids:
        if w_l:
            inst.objective[r["L", p]] = -w_l
    return inst


def build_m1(g: ConflictGraph, demands: Mapping[str, float], params: CmatParameters) -> MilpInstance:
    return build_model(g, demands, params, "m1")


def build_m2(
    g: ConflictGraph, demands: Mapping[str, float], params: CmatParameters, service: str = "cap"
) -> MilpInstance:
    return build_model(g, demands, params, "m2", m2_service=service)
