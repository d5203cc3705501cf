import numpy as np
import pytest

from hft.model_spaces import (
    make_laguerre,
    make_ou,
    prepare_potential,
    sqrt_potential,
)
from hft.semigroup import FiniteDifferenceEvaluator, MehlerEvaluator, SpectralEvaluator


@pytest.fixture(scope="session")
def ou():
    return make_ou()


@pytest.fixture(scope="session")
def lag():
    return make_laguerre(1.5)


@pytest.fixture(scope="session")
def mehler(ou):
    return MehlerEvaluator(ou)


@pytest.fixture(scope="session")
def ou_fd(ou):
    return FiniteDifferenceEvaluator(ou)


@pytest.fixture(scope="session")
def lag_spectral(lag):
    return SpectralEvaluator(lag)


@pytest.fixture(scope="session")
def lag_fd(lag):
    return FiniteDifferenceEvaluator(lag)


@pytest.fixture(scope="session")
def sqrt_pot(lag):
    return prepare_potential(lag, sqrt_potential(0.5))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_record(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])
    return lines.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
