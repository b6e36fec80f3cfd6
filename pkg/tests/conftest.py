import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bipotentials.materials import DruckerPragerParams, ElasticModuli

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def moduli():
    return ElasticModuli(50.0, 100.0)


@pytest.fixture
def params():
    return DruckerPragerParams.from_degrees(1.0, 30.0, 10.0, 1.0)


@pytest.fixture
def params_assoc():
    return DruckerPragerParams.from_degrees(1.0, 30.0, 30.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
