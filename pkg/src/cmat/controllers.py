"""Controller factories used by load sweeps: demand in, simulated controller out."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

from .baselines import SignalPlan, TscConfig, rc_schedule, webster_plan
from .conflict_graph import ConflictGraph
from .lp import OPTIMAL
from .milp_solver import FeasibleStartError, SolveOptions, feasible_start, solution_at, solve
from .model import CmatParameters, build_m1, build_m2
from .schedule import CyclicSchedule, extract_schedule, schedule_invariants, verify_safety
from .simulator import ControllerRun

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    """``backend="auto"`` uses the built-in branch-and-bound on graphs with at most
    ``small_nodes`` conflict points and HiGHS otherwise.

    Node limits bound the search deterministically; the time limits are only a
    backstop, and a run that hits one is no longer reproducible.
    """

    backend: str = "auto"
    small_nodes: int = 3
    m1_time_limit: float = 300.0
    m2_time_limit: float = 300.0
    rc_time_limit: float = 60.0
    m1_node_limit: int | None = 30000
    m2_node_limit: int | None = 10000

    def __post_init__(self):
        if self.backend not in ("auto", "bnb", "highs"):
            raise ValueError(f"unknown solver backend {self.backend!r}")
        for name in ("m1_time_limit", "m2_time_limit", "rc_time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("m1_node_limit", "m2_node_limit"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be at least 1")

    def options(self, g: ConflictGraph, time_limit: float, node_limit: int | None = None) -> SolveOptions:
        backend = self.backend
        if backend == "auto":
            backend = "bnb" if len(g.nodes) <= self.small_nodes else "highs"
        return SolveOptions(backend=backend, time_limit=time_limit, node_limit=node_limit)


def _checked(s: CyclicSchedule, g: ConflictGraph) -> bool:
    return verify_safety(s, g, 5).ok and not schedule_invariants(s, g)


@dataclass
class CmatFactory:
    """Queue-clearing model first; the relaxed model when that is infeasible.

    A queue-clearing solve that hits its time limit without any feasible point
    is treated as infeasible.
    """

    g: ConflictGraph
    params: CmatParameters = field(default_factory=CmatParameters)
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __call__(self, demands: Mapping[str, float]) -> ControllerRun:
        g, params = self.g, self.params
        st = self.solver
        sol = solve(build_m1(g, demands, params), st.options(g, st.m1_time_limit, st.m1_node_limit))
        model = "M1"
        if not sol.has_solution:
            model = "M2"
            inst = build_m2(g, demands, params)
            opts = st.options(g, st.m2_time_limit, st.m2_node_limit)
            start = None
            if opts.backend == "bnb":
                try:
                    start = inst.assignment(feasible_start(g, inst.meta["demands"], params))
                except FeasibleStartError:
                    start = None
            sol = solve(inst, opts, start)
            if not sol.has_solution:
                raise RuntimeError(f"relaxed model returned {sol.status} without a schedule")
        return self._run(sol, model)

    def _run(self, sol, model: str) -> ControllerRun:
        s = extract_schedule(sol, self.g, self.params, model.lower())
        return ControllerRun(s, model, s.C, s.platoon_sizes, None, _checked(s, self.g), sol.status, dict(sol.values))

    def refine(self, run: ControllerRun, demands: Mapping[str, float], earlier: ControllerRun) -> ControllerRun | None:
        """Adopt a relaxed-model point found at lower load if it scores better here.

        Raising demand only loosens the relaxed model (service caps grow, muted
        movements get freed) and leaves its objective unchanged, so a lower-load
        point usually stays feasible and a sweep's relaxed rows become monotone.
        """
        if run.model_used != "M2" or earlier.model_used != "M2" or not run.incumbent or not earlier.incumbent:
            return None
        inst = build_m2(self.g, demands, self.params)
        if set(earlier.incumbent) != set(inst.roles) or set(run.incumbent) != set(inst.roles):
            return None
        x = inst.assignment(earlier.incumbent)
        if inst.violations(x):
            return None
        if inst.objective_value(x) >= inst.objective_value(inst.assignment(run.incumbent)) - 1e-9:
            return None
        return self._run(solution_at(inst, x), "M2")


@dataclass
class RcFactory:
    """Unit-platoon alternation; the schedule does not depend on demand, so it is built once."""

    g: ConflictGraph
    params: CmatParameters = field(default_factory=CmatParameters)
    solver: SolverSettings = field(default_factory=SolverSettings)
    _cached: CyclicSchedule | None = field(default=None, init=False, repr=False)

    def __call__(self, demands: Mapping[str, float]) -> ControllerRun:
        if self._cached is None:
            opts = self.solver.options(self.g, self.solver.rc_time_limit)
            self._cached = rc_schedule(self.g, self.params, opts)
        s = self._cached
        return ControllerRun(s, "n/a", s.C, s.platoon_sizes, None, _checked(s, self.g), OPTIMAL)


@dataclass
class TscFactory:
    g: ConflictGraph
    params: CmatParameters = field(default_factory=CmatParameters)
    tsc: TscConfig = field(default_factory=TscConfig)

    def __call__(self, demands: Mapping[str, float]) -> ControllerRun:
        plan: SignalPlan = webster_plan(self.g, demands, self.params, self.tsc)
        if not plan.feasible:
            log.info("fixed-time plan oversaturated; simulating the capped plan")
        return ControllerRun(plan, "n/a", plan.cycle, {}, plan.feasible, None, "")
