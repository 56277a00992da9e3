import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lazyfilter.data import PartitionConfig, make_synthetic

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def blobs():
    """Small, well-separated 3-class problem."""
    return make_synthetic(3, 4, 20, 8.0, seed=11)


@pytest.fixture
def small_partition():
    return PartitionConfig(participant_count=6, train_batch_size=20, test_set_size=10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
