import numpy as np
import pytest
from hypothesis import given, strategies as st

from cmat.analytics import (
    FlowParameters,
    capacity_alpha,
    capacity_platoon,
    expected_platoon_delay,
    simulate_platoon_wait,
)

FP = FlowParameters()


@pytest.mark.parametrize(
    "alpha, expected",
    [(0.0, 0.8), (1.0, 1 / 2.25), (0.5, 1 / 1.75)],
)
def test_capacity_alpha_values(alpha, expected):
    assert capacity_alpha(FP, alpha) == pytest.approx(expected, rel=1e-12)


def test_saturation_in_vph():
    assert FP.q_max * 3600 == pytest.approx(2880.0)
    assert FP.q_crossing * 3600 == pytest.approx(1600.0)


def test_capacity_alpha_domain():
    with pytest.raises(ValueError):
        capacity_alpha(FP, 1.5)
    with pytest.raises(ValueError):
        capacity_alpha(FP, -0.1)


def test_capacity_platoon_values():
    assert capacity_platoon(FP, 1) == pytest.approx(capacity_alpha(FP, 1.0))
    assert capacity_platoon(FP, 2) == pytest.approx(1 / 1.75)
    assert capacity_platoon(FP, 1000) == pytest.approx(0.8, rel=1e-3)
    with pytest.raises(ValueError):
        capacity_platoon(FP, 0)


@given(st.integers(1, 5000))
def test_capacity_platoon_strictly_increasing_and_bounded(n):
    assert capacity_platoon(FP, n + 1) > capacity_platoon(FP, n)
    assert capacity_platoon(FP, n) < FP.q_max


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_capacity_alpha_decreasing(a, b):
    if a < b - 1e-9:
        assert capacity_alpha(FP, a) > capacity_alpha(FP, b)


@pytest.mark.parametrize("n, mu, expected", [(1, 7.0, 0.0), (5, 2.0, 4.0), (3, 3.6, 3.6)])
def test_expected_platoon_delay_values(n, mu, expected):
    assert expected_platoon_delay(n, mu) == pytest.approx(expected)


@given(st.integers(1, 500), st.floats(0.01, 100.0))
def test_expected_platoon_delay_linear_in_n(n, mu):
    step = expected_platoon_delay(n + 1, mu) - expected_platoon_delay(n, mu)
    assert step == pytest.approx(mu / 2, rel=1e-9)


def test_flow_parameters_reject_crossing_below_following():
    with pytest.raises(ValueError):
        FlowParameters(tau_f=2.0, tau_c=1.0)


@pytest.mark.parametrize("arrivals", ["deterministic", "exponential"])
@pytest.mark.parametrize("n", [1, 3, 10])
def test_renewal_wait_matches_closed_form(n, arrivals):
    # the estimator's z-score over 200 seeds has mean ~0 and sd ~1, so one
    # fixed seed is an honest 3-sigma check
    mu = 3.6
    mean, se = simulate_platoon_wait(n, mu, 20000, np.random.default_rng(1), arrivals)
    target = expected_platoon_delay(n, mu)
    assert abs(mean - target) <= max(3 * se, 1e-9 * max(1.0, target))
