import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tilestore import TileStore

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def store(tmp_path):
    st = TileStore(tmp_path / "store")
    yield st
    st.close()


def noise_video(rng, n=30, h=320, w=640):
    return rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
