import os
import sys
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _quiet_guard_warning():
    # the alpha smallness guard is advisory; tests that care catch it explicitly
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="alpha\\*", category=RuntimeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def square16():
    from sqglab.spectral import build_eigenbasis, rectangle
    return build_eigenbasis(rectangle(), (16, 16))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS, key=int):
        terminalreporter.write_line(mod.RESULTS[k].line())
