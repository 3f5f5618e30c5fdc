import numpy as np
import pytest

from dualalloc.data import split_dataset
from dualalloc.synthetic import SyntheticConfig, gen_synthetic, toy_fixture
from dualalloc.world_model import fit_models


@pytest.fixture(scope="session")
def toy():
    """Toy spec with a large uniform log and an unsmoothed model fitted on it."""
    spec, data = toy_fixture(n_episodes=10_000, seed=0)
    return spec, data, fit_models(data, smoothing=0.0)


@pytest.fixture(scope="session")
def toy_split():
    spec, data = toy_fixture(n_episodes=4000, seed=1)
    split = split_dataset(data, 0.5, 0)
    return spec, split, fit_models(split.train, smoothing=0.0)


@pytest.fixture(scope="session")
def synthetic():
    spec, data = gen_synthetic(SyntheticConfig())
    split = split_dataset(data, 0.5, 0)
    return spec, split, fit_models(split.train)


def greedy(choices, n_actions=2):
    """Deterministic policy table from one action per state."""
    probs = np.zeros((len(choices), n_actions))
    probs[np.arange(len(choices)), choices] = 1.0
    return probs


# (criterion, passed, detail) lines, printed after the run by the hook below
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
