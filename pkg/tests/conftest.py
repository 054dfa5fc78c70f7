import numpy as np
import pytest

from gerbil.core import TabularDataset
from gerbil.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny():
    """10 features, 60 samples, 3 planted columns (one near-copy each)."""
    return generate(SynthConfig(n_features=10, n_samples=60, n_informative=3, n_copies=1, seed=0))


@pytest.fixture
def separable():
    rng = np.random.default_rng(7)
    y = np.array([0, 1] * 20)
    X = rng.standard_normal((40, 4))
    X[:, 0] = y
    return TabularDataset(X, y)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
