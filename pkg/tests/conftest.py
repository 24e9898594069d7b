import numpy as np
import pytest

from app.core.config import Settings, activate_settings, settings
from tests.helpers import garch_marginal, white_noise_marginal


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20230501)


@pytest.fixture
def noise_fit():
    return white_noise_marginal()


@pytest.fixture
def garch_fit():
    return garch_marginal()


@pytest.fixture
def restore_settings():
    saved = settings.model_dump()
    yield
    activate_settings(Settings(**saved))
