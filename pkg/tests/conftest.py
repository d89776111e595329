import os
from functools import lru_cache

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("thorough", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# the pipeline setup shared by the trend tests: resolution 32, two cells per well
# radius, 200 landmarks.  j = 8 alone takes about half a minute to prepare.
PIPELINE_RESOLUTION = 32
PIPELINE_LANDMARKS = 200
PIPELINE_CELLS_PER_RADIUS = 2


@lru_cache(maxsize=None)
def _family_context(family, j):
    from flatlab.flatbound import family_context
    return family_context(family, j, PIPELINE_RESOLUTION, landmarks=PIPELINE_LANDMARKS,
                          cells_per_radius=PIPELINE_CELLS_PER_RADIUS)


@pytest.fixture(scope="session")
def ilmanen_context():
    """``ilmanen_context(j)`` returns the cached pipeline context for member ``j``."""
    return lambda j: _family_context("ilmanen", j)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
