"""Experiment configuration files (JSON).

Layout::

    {
      "name": "single_conflict_balanced",
      "scenario": {"kind": "single_conflict", "geometry": {"lane_width": 3.5, "spacing": 500}},
      "demand": {"base_vph": [1000, 1000], "beta": {"start": 0.1, "stop": 2.5, "step": 0.1}},
      "params": {"v_f": 18, "l": 4.5, "tau_f": 1, "tau_c": 2, "tau_star": 10, "lambda": 0.9,
                 "c_max": 120, "horizon": 3600, "warmup": 120, "seed": 0, "arrivals": "deterministic"},
      "controllers": ["cmat", "rc"],
      "tsc": {"lost_per_phase": 4},
      "solver": {"backend": "auto", "m1_time_limit": 300, "m2_time_limit": 300, "m1_node_limit": 30000, "m2_node_limit": 10000},
      "output": {"dir": "results"}
    }

``base_vph`` is either the scenario's per-leg vector or an object keyed by
movement id.  Every error names the offending field as a ``$.a.b`` path.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .analytics import FlowParameters
from .baselines import TscConfig
from .controllers import SolverSettings
from .model import CmatParameters
from .scenarios import SCENARIOS, GeometryParams, build_scenario, expand_demand
from .simulator import SimConfig

CONTROLLERS = ("cmat", "rc", "tsc")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BetaRange:
    start: float
    stop: float
    step: float

    def values(self) -> list[float]:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        # rounded so that 0.1-steps print and compare cleanly
        return [round(self.start + k * self.step, 10) for k in range(n + 1)]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    scenario: str
    geometry: GeometryParams
    base_vph: list[float] | dict[str, float]
    betas: BetaRange
    params: CmatParameters
    sim: SimConfig
    controllers: tuple[str, ...]
    tsc: TscConfig = field(default_factory=TscConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = "results"


def _get(d, key, path, kind, default=None, required=False):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    v = d[key]
    here = f"{path}.{key}"
    if kind == "number":
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{here}: expected a number, got {v!r}")
        return float(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{here}: expected an integer, got {v!r}")
        return v
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{here}: expected a string, got {v!r}")
        return v
    if kind == "object":
        if not isinstance(v, dict):
            raise ConfigError(f"{here}: expected an object")
        return v
    return v


def _build(cls, path, kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(d: dict) -> ExperimentConfig:
    name = _get(d, "name", "$", "str", required=True)
    sc = _get(d, "scenario", "$", "object", required=True)
    kind = _get(sc, "kind", "$.scenario", "str", required=True)
    if kind not in SCENARIOS + ("t_intersection",):
        raise ConfigError(f"$.scenario.kind: unknown scenario {kind!r}; expected one of {list(SCENARIOS)}")
    gd = _get(sc, "geometry", "$.scenario", "object", default={})
    gkw = {}
    for f in fields(GeometryParams):
        if f.name in gd:
            gkw[f.name] = _get(gd, f.name, "$.scenario.geometry", "int" if f.name == "arc_samples" else "number")
    unknown = set(gd) - {f.name for f in fields(GeometryParams)}
    if unknown:
        raise ConfigError(f"$.scenario.geometry.{sorted(unknown)[0]}: unknown field")
    geometry = _build(GeometryParams, "$.scenario.geometry", gkw)

    dm = _get(d, "demand", "$", "object", required=True)
    base = dm.get("base_vph")
    if isinstance(base, list):
        if not base:
            raise ConfigError("$.demand.base_vph: empty vector")
        for k, v in enumerate(base):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"$.demand.base_vph[{k}]: expected a non-negative number, got {v!r}")
        base = [float(v) for v in base]
    elif isinstance(base, dict):
        for k, v in base.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"$.demand.base_vph.{k}: expected a non-negative number, got {v!r}")
        base = {k: float(v) for k, v in base.items()}
    else:
        raise ConfigError("$.demand.base_vph: expected a list or an object")
    try:
        expand_demand(build_scenario(kind, geometry), kind, base)
    except ValueError as exc:
        raise ConfigError(f"$.demand.base_vph: {exc}") from exc
    bd = _get(dm, "beta", "$.demand", "object", required=True)
    start = _get(bd, "start", "$.demand.beta", "number", required=True)
    stop = _get(bd, "stop", "$.demand.beta", "number", required=True)
    step = _get(bd, "step", "$.demand.beta", "number", default=0.1)
    if not step > 0:
        raise ConfigError(f"$.demand.beta.step: must be positive, got {step:g}")
    if not start > 0:
        raise ConfigError(f"$.demand.beta.start: must be positive, got {start:g}")
    if stop < start:
        raise ConfigError(f"$.demand.beta.stop: must be at least start ({start:g}), got {stop:g}")
    betas = BetaRange(start, stop, step)

    pd = _get(d, "params", "$", "object", default={})
    known = {"v_f", "l", "tau_f", "tau_c", "tau_star", "lambda", "c_max", "horizon", "warmup", "seed", "arrivals", "rho"}
    unknown = set(pd) - known
    if unknown:
        raise ConfigError(f"$.params.{sorted(unknown)[0]}: unknown field")
    if "rho" in pd:
        warnings.warn("params.rho is accepted but no part of the model uses it", stacklevel=2)
    num = lambda k, dflt: _get(pd, k, "$.params", "number", default=dflt)  # noqa: E731
    flow = _build(
        FlowParameters, "$.params",
        {"v_f": num("v_f", 18.0), "l": num("l", 4.5), "tau_f": num("tau_f", 1.0), "tau_c": num("tau_c", 2.0)},
    )
    params = _build(
        CmatParameters, "$.params",
        {"flow": flow, "tau_star": num("tau_star", 10.0), "lam": num("lambda", 0.9), "c_max": num("c_max", 120.0)},
    )
    sim = _build(
        SimConfig, "$.params",
        {
            "horizon": num("horizon", 3600.0),
            "warmup": num("warmup", 120.0),
            "arrivals": _get(pd, "arrivals", "$.params", "str", default="deterministic"),
            "seed": _get(pd, "seed", "$.params", "int", default=0),
        },
    )

    ctrl = d.get("controllers", ["cmat", "rc", "tsc"])
    if not isinstance(ctrl, list) or not ctrl:
        raise ConfigError("$.controllers: expected a non-empty list")
    for k, c in enumerate(ctrl):
        if c not in CONTROLLERS:
            raise ConfigError(f"$.controllers[{k}]: unknown controller {c!r}; expected one of {list(CONTROLLERS)}")

    td = _get(d, "tsc", "$", "object", default={})
    groups = td.get("phase_groups")
    if groups is not None and not isinstance(groups, dict):
        raise ConfigError("$.tsc.phase_groups: expected an object of intersection -> phases")
    tsc = _build(
        TscConfig, "$.tsc",
        {"lost_per_phase": _get(td, "lost_per_phase", "$.tsc", "number", default=4.0), "phase_groups": groups},
    )
    sd = _get(d, "solver", "$", "object", default={})
    skw = {}
    for f in fields(SolverSettings):
        if f.name in sd:
            kind_ = "str" if f.name == "backend" else ("int" if f.name in ("small_nodes", "m1_node_limit", "m2_node_limit") else "number")
            skw[f.name] = _get(sd, f.name, "$.solver", kind_)
    solver = _build(SolverSettings, "$.solver", skw)
    od = _get(d, "output", "$", "object", default={})
    out_dir = _get(od, "dir", "$.output", "str", default="results")
    return ExperimentConfig(name, kind, geometry, base, betas, params, sim, tuple(ctrl), tsc, solver, out_dir)


def shipped_configs() -> list[str]:
    root = resources.files("cmat") / "configs"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name: str | Path) -> ExperimentConfig:
    """Read a config file, or a shipped config given by name."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in shipped_configs():
        text = (resources.files("cmat") / "configs" / f"{path_or_name}.json").read_text(encoding="utf-8")
    else:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"$: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(d)


def with_overrides(cfg: ExperimentConfig, horizon=None, seed=None, output_dir=None) -> ExperimentConfig:
    import dataclasses

    sim = cfg.sim
    if horizon is not None:
        sim = _build(SimConfig, "--horizon", {**dataclasses.asdict(sim), "horizon": float(horizon)})
    if seed is not None:
        sim = dataclasses.replace(sim, seed=int(seed))
    return dataclasses.replace(cfg, sim=sim, output_dir=output_dir or cfg.output_dir)

