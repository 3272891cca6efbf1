"""Compare branch-and-bound against the exhaustive oracle on random small instances.

    python3 scripts/oracle_check.py [--n 50] [--seed 0]
"""

from __future__ import annotations

import argparse

import numpy as np

from cmat.milp_solver import SolveOptions, enumerate_oracle, solve
from cmat.model import CmatParameters, MovementDemand, build_model
from cmat.scenarios import build_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    worst, mismatches = 0.0, 0
    for kind in ("single_conflict", "t_intersection"):
        g = build_scenario(kind)
        for _ in range(args.n):
            for model, params, lo, hi in (("m1", CmatParameters(), 200, 2400), ("m2", CmatParameters(tau_star=30.0), 125, 360)):
                d = MovementDemand.from_vph({p: rng.uniform(lo, hi) for p in g.movement_ids})
                a = solve(build_model(g, d, params, model), SolveOptions(backend="bnb"))
                b = enumerate_oracle(g, d, params, model)
                if a.status != b.status:
                    mismatches += 1
                elif a.has_solution:
                    worst = max(worst, abs(a.objective - b.objective))
    print(f"{4 * args.n} instances, {mismatches} status mismatches, max objective gap {worst:.3g}")


if __name__ == "__main__":
    main()
