import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from petridecay.petri_net import build_net

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict that is echoed in the terminal summary."""
    def record(tag: str, passed: bool, detail: str):
        line = f"{tag} {'PASS' if passed else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(line)


@pytest.fixture
def linear_abc():
    """p0 -A-> p1 -B-> p2 -C-> p3"""
    return build_net(["p0", "p1", "p2", "p3"], [("tA", "A"), ("tB", "B"), ("tC", "C")],
                     [("p0", "tA"), ("tA", "p1"), ("p1", "tB"), ("tB", "p2"),
                      ("p2", "tC"), ("tC", "p3")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
