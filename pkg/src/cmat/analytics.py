"""Closed-form capacity and platoon-delay formulas for a single conflict point.

All flows are in veh/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FlowParameters:
    """Free-flow speed (m/s), vehicle length (m), following and crossing headways (s)."""

    v_f: float = 18.0
    l: float = 4.5
    tau_f: float = 1.0
    tau_c: float = 2.0

    def __post_init__(self):
        for name in ("v_f", "l", "tau_f", "tau_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.tau_c > self.tau_f:
            raise ValueError("tau_c must exceed tau_f")

    @property
    def pass_time(self) -> float:
        """Time for one vehicle body to clear a point, l / v_f."""
        return self.l / self.v_f

    @property
    def q_max(self) -> float:
        """Saturation flow 1 / (tau_f + l / v_f)."""
        return 1.0 / (self.tau_f + self.pass_time)

    @property
    def q_crossing(self) -> float:
        """Flow when every vehicle keeps the crossing headway, 1 / (tau_c + l / v_f)."""
        return 1.0 / (self.tau_c + self.pass_time)


def capacity_alpha(fp: FlowParameters, alpha: float) -> float:
    """Throughput when a fraction ``alpha`` of headways are crossing headways."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return 1.0 / (alpha * fp.tau_c + (1.0 - alpha) * fp.tau_f + fp.pass_time)


def capacity_platoon(fp: FlowParameters, n: int) -> float:
    """Throughput when both movements release platoons of size ``n``."""
    if int(n) != n or n < 1:
        raise ValueError(f"platoon size must be a positive integer, got {n}")
    return capacity_alpha(fp, 1.0 / n)


def expected_platoon_delay(n: int, mu: float) -> float:
    """Mean wait per vehicle when a platoon leaves as soon as its n-th member arrives."""
    if n < 1:
        raise ValueError("platoon size must be at least 1")
    if not mu > 0:
        raise ValueError("mean inter-arrival time must be positive")
    return (n - 1) * mu / 2.0


def simulate_platoon_wait(
    n: int,
    mu: float,
    n_platoons: int,
    rng: np.random.Generator,
    arrivals: str = "exponential",
) -> tuple[float, float]:
    """Monte-Carlo mean per-vehicle accumulation wait and its standard error.

    Each platoon collects ``n`` vehicles with i.i.d. gaps of mean ``mu`` and is
    released the instant the last one arrives.  The per-platoon average wait is
    the sampling unit, so the standard error is over independent platoons.
    """
    if arrivals == "exponential":
        gaps = rng.exponential(mu, size=(n_platoons, n))
    elif arrivals == "deterministic":
        gaps = np.full((n_platoons, n), float(mu))
    else:
        raise ValueError(f"unknown arrival model {arrivals!r}")
    epochs = np.cumsum(gaps, axis=1)
    waits = epochs[:, -1:] - epochs
    per_platoon = waits.mean(axis=1)
    se = per_platoon.std(ddof=1) / np.sqrt(n_platoons) if n_platoons > 1 else 0.0
    return float(per_platoon.mean()), float(se)
