import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from dynamics import StopCriteria  # noqa: E402
from model import SystemParams  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long figure-reproduction tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def chain_params():
    return SystemParams(rabi=0.05, detuning=0.0, trap_freq=1.0)


@pytest.fixture
def pair_params():
    return SystemParams(rabi=0.05, detuning=0.0, trap_freq=0.1)


@pytest.fixture
def short_stop():
    """A few thousand Γ₀⁻¹ with a short hold window."""
    return StopCriteria(t_max=5000.0, sample_dt=50.0, stride=1, t_hold=500.0)
