"""Command line: load sweeps, single solves and schedule inspection.

    cmat-bench run <config> [--horizon S] [--seed N] [--workers K] [--out-dir DIR]
    cmat-bench solve <config> --beta X --out FILE [--controller cmat|rc|tsc]
    cmat-bench explain <schedule.json>

``<config>`` is a JSON file or the name of a shipped config.  The output
directory is, in order of precedence, ``--out-dir``, ``$CMAT_OUTPUT_DIR`` and
the config's ``output.dir``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .baselines import SignalPlan
from .config import ConfigError, ExperimentConfig, load_config, shipped_configs, with_overrides
from .controllers import CmatFactory, RcFactory, TscFactory
from .model import MovementDemand
from .scenarios import build_scenario, expand_demand
from .schedule import CyclicSchedule, ScheduleFormatError, load_controller, save_controller
from .simulator import SweepRow, capacity_sweep, switch_beta

OUTPUT_ENV = "CMAT_OUTPUT_DIR"
CSV_COLUMNS = (
    "scenario", "controller", "beta", "demand_total_vph", "throughput_vph", "mean_delay_s",
    "cycle_s", "platoon_sizes", "model_used", "tsc_feasible", "safety_ok",
)
PANELS = ("throughput_vph", "mean_delay_s", "cycle_s")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    movements: list[str]
    rows: dict[str, list[SweepRow]]
    seconds: float


def make_factory(cfg: ExperimentConfig, controller: str, g):
    if controller == "cmat":
        return CmatFactory(g, cfg.params, cfg.solver)
    if controller == "rc":
        return RcFactory(g, cfg.params, cfg.solver)
    if controller == "tsc":
        return TscFactory(g, cfg.params, cfg.tsc)
    raise ValueError(f"unknown controller {controller!r}")


def base_demand(cfg: ExperimentConfig, g) -> MovementDemand:
    return MovementDemand.from_vph(expand_demand(g, cfg.scenario, cfg.base_vph))


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    t0 = time.perf_counter()
    g = build_scenario(cfg.scenario, cfg.geometry)
    base = base_demand(cfg, g)
    betas = cfg.betas.values()
    rows = {}
    for controller in cfg.controllers:
        factory = make_factory(cfg, controller, g)
        rows[controller] = capacity_sweep(factory, g, base, betas, cfg.sim, workers)
    return ExperimentResult(cfg, g.movement_ids, rows, time.perf_counter() - t0)


def _flag(v: bool | None) -> str:
    return "" if v is None else ("true" if v else "false")


def csv_rows(result: ExperimentResult) -> list[dict[str, str]]:
    out = []
    for controller, rows in result.rows.items():
        for r in rows:
            rec = {
                "scenario": result.config.name,
                "controller": controller,
                "beta": f"{r.beta:g}",
                "demand_total_vph": f"{r.demand_total_vph:.3f}",
                "throughput_vph": "", "mean_delay_s": "", "cycle_s": "", "platoon_sizes": "",
                "model_used": "error" if r.run is None else r.run.model_used,
                "tsc_feasible": "", "safety_ok": "",
            }
            if r.metrics is not None:
                rec["throughput_vph"] = f"{r.metrics.throughput_vph:.3f}"
                rec["mean_delay_s"] = f"{r.metrics.mean_delay:.3f}"
            if r.run is not None:
                rec["cycle_s"] = f"{r.run.cycle:.6f}"
                rec["platoon_sizes"] = ";".join(str(r.run.platoon_sizes[p]) for p in result.movements if p in r.run.platoon_sizes)
                rec["tsc_feasible"] = _flag(r.run.tsc_feasible)
                rec["safety_ok"] = _flag(r.run.safety_ok)
            out.append(rec)
    return out


def write_outputs(result: ExperimentResult, out_dir: Path) -> list[Path]:
    """One results CSV, one CSV per figure panel and a JSON of switch annotations."""
    out_dir.mkdir(parents=True, exist_ok=True)
    name = result.config.name
    written = []
    main = out_dir / f"{name}.csv"
    with main.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(csv_rows(result))
    written.append(main)

    controllers = list(result.rows)
    betas = [r.beta for r in next(iter(result.rows.values()))]
    records = csv_rows(result)
    for panel in PANELS:
        path = out_dir / f"{name}.{panel}.csv"
        table = {(rec["controller"], rec["beta"]): rec[panel] for rec in records}
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", *controllers])
            for b in betas:
                w.writerow([f"{b:g}", *(table[(c, f'{b:g}')] for c in controllers)])
        written.append(path)
    if "cmat" in result.rows:
        path = out_dir / f"{name}.platoon_sizes.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["beta", *result.movements])
            for r in result.rows["cmat"]:
                sizes = r.run.platoon_sizes if r.run else {}
                w.writerow([f"{r.beta:g}", *(sizes.get(p, "") for p in result.movements)])
        written.append(path)

    notes = {"cmat_switch_beta": None, "tsc_infeasible_beta": None}
    if "cmat" in result.rows:
        notes["cmat_switch_beta"] = switch_beta(result.rows["cmat"])
    if "tsc" in result.rows:
        notes["tsc_infeasible_beta"] = next(
            (r.beta for r in result.rows["tsc"] if r.run is not None and r.run.tsc_feasible is False), None
        )
    path = out_dir / f"{name}.annotations.json"
    path.write_text(json.dumps(notes, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written


def explain_text(obj) -> str:
    buf = io.StringIO()
    if isinstance(obj, CyclicSchedule):
        buf.write(f"cyclic schedule ({obj.model or 'unspecified model'})\n")
        buf.write(f"C = {obj.C:.6g} s\n\n")
        buf.write(f"{'movement':<10} {'r':>10} {'g':>10} {'L':>4} {'t_off':>10} {'T':>10}\n")
        for p, m in sorted(obj.movements.items()):
            buf.write(f"{p:<10} {m.r:>10.4f} {m.g:>10.4f} {m.L:>4d} {m.t_off:>10.4f} {m.T:>10.4f}\n")
        buf.write(f"\n{'node':<24} {'tau_lo':>9} {'tau_hi':>9}  order\n")
        for n, nt in sorted(obj.nodes.items()):
            order = f"{nt.p1} then {nt.p2}" if nt.z == 1 else f"{nt.p2} then {nt.p1}"
            buf.write(f"{n:<24} {nt.tau_lo:>9.4f} {nt.tau_hi:>9.4f}  {order}\n")
    elif isinstance(obj, SignalPlan):
        buf.write(f"fixed-time plan, cycle {obj.cycle:.6g} s, {'feasible' if obj.feasible else 'oversaturated'}\n")
        for site, phases in sorted(obj.phases.items()):
            buf.write(f"\nintersection {site} (offset {obj.offsets.get(site, 0.0):.4g} s)\n")
            for k, ph in enumerate(phases):
                buf.write(f"  phase {k + 1}: green {ph.green:.4f} s, lost {ph.lost:.4g} s, y {ph.flow_ratio:.4f}: {', '.join(ph.movements)}\n")
    else:
        raise TypeError(type(obj).__name__)
    return buf.getvalue()


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def cmd_run(args) -> int:
    cfg = with_overrides(load_config(args.config), horizon=args.horizon, seed=args.seed)
    result = run_experiment(cfg, workers=args.workers)
    paths = write_outputs(result, _out_dir(args, cfg))
    errors = [(c, r) for c, rows in result.rows.items() for r in rows if r.error]
    for c, r in errors:
        print(f"error: {c} beta={r.beta:g}: {r.error}", file=sys.stderr)
    print(f"{cfg.name}: {sum(len(v) for v in result.rows.values())} rows in {result.seconds:.1f} s")
    for p in paths:
        print(f"  wrote {p}")
    return 1 if errors else 0


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    g = build_scenario(cfg.scenario, cfg.geometry)
    demands = base_demand(cfg, g).scaled(args.beta)
    run = make_factory(cfg, args.controller, g)(demands)
    save_controller(run.controller, args.out)
    print(f"{args.controller} at beta={args.beta:g}: model {run.model_used}, cycle {run.cycle:.6g} s -> {args.out}")
    return 0


def cmd_explain(args) -> int:
    print(explain_text(load_controller(args.schedule)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmat-bench", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="sweep the load factor and write CSV results")
    r.add_argument("config", help=f"config file or shipped name ({', '.join(shipped_configs())})")
    r.add_argument("--horizon", type=float, help="simulated seconds per row")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("solve", help="build one controller and save it")
    s.add_argument("config")
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--controller", choices=("cmat", "rc", "tsc"), default="cmat")
    s.set_defaults(func=cmd_solve)
    e = sub.add_parser("explain", help="print the timing table of a saved schedule or plan")
    e.add_argument("schedule")
    e.set_defaults(func=cmd_explain)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, ScheduleFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
