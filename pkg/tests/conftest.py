import pytest
from hypothesis import HealthCheck, settings

from cmat.model import CmatParameters, MovementDemand
from cmat.scenarios import build_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return CmatParameters()


@pytest.fixture(scope="session")
def single():
    return build_scenario("single_conflict")


@pytest.fixture(scope="session")
def tee():
    return build_scenario("t_intersection")


def vph(g, *flows):
    """Demand in veh/s from per-movement veh/h given in movement-id order."""
    return MovementDemand.from_vph(dict(zip(g.movement_ids, flows)))


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    """Repeat the acceptance verdicts, one line per criterion."""
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
