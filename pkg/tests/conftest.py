import numpy as np
import pytest

from dyingrelu.model import SignalModel, make_model_with_activation, sweep_mu

SWEEP_PROBS = (0.8, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05)

_ACCEPTANCE = pytest.StashKey[list]()


def random_models(n=50, seed=2024):
    """Random models with L in {3, 5, 11}, mu in [-2, 2], |a| in [0.1, 2], Pr[d>0] in [0.02, 0.98]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        L = int(rng.choice([3, 5, 11]))
        mu = rng.uniform(-2, 2, L)
        a = rng.uniform(0.1, 2.0) * rng.choice([-1.0, 1.0])
        p = rng.uniform(0.02, 0.98)
        out.append(make_model_with_activation(mu, a, p))
    return out


@pytest.fixture
def fig6_model():
    """L = 11, mu = [2, 1.6, ..., -2], a = 0.5, Pr[d > 0] = 0.3."""
    return make_model_with_activation(sweep_mu(), 0.5, 0.3)


@pytest.fixture
def zero_mean_model():
    return SignalModel(np.zeros(4), 1.0, 0.0)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
