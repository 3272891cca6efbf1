"""Run every shipped config and write its CSVs, then print the headline numbers.

    python3 scripts/run_all_sweeps.py [--out-dir results] [--only NAME ...]
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from cmat.bench import run_experiment, write_outputs
from cmat.config import load_config, shipped_configs
from cmat.simulator import plateau, switch_beta


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--only", nargs="*", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    names = args.only or shipped_configs()
    for name in names:
        res = run_experiment(load_config(name))
        write_outputs(res, Path(args.out_dir))
        summary = ", ".join(f"{c} plateau {plateau(rows):.0f} veh/h" for c, rows in res.rows.items())
        sw = switch_beta(res.rows["cmat"]) if "cmat" in res.rows else None
        print(f"{name}: {summary}; M2 from beta {sw}; {res.seconds:.0f} s")


if __name__ == "__main__":
    main()
