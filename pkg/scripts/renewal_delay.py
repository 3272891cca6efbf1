"""Monte-Carlo platoon accumulation wait against (N-1) mu / 2.

    python3 scripts/renewal_delay.py [--mu 3.6] [--platoons 20000] [--seed 1]
"""

from __future__ import annotations

import argparse

import numpy as np

from cmat.analytics import expected_platoon_delay, simulate_platoon_wait


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--mu", type=float, default=3.6)
    ap.add_argument("--platoons", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    print(f"{'arrivals':<13} {'N':>3} {'closed form':>12} {'simulated':>10} {'se':>8}")
    for arrivals in ("deterministic", "exponential"):
        for n in (1, 2, 3, 5, 10, 20):
            mean, se = simulate_platoon_wait(n, args.mu, args.platoons, np.random.default_rng(args.seed), arrivals)
            print(f"{arrivals:<13} {n:>3} {expected_platoon_delay(n, args.mu):>12.4f} {mean:>10.4f} {se:>8.4f}")


if __name__ == "__main__":
    main()
