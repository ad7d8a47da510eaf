import numpy as np
import pytest

from mxdefer.core import ExpertPanel, FiniteDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def one_point():
    """n=2, n_e=1, p=(0.7, 0.3); the expert is right on class 0 only."""
    d = FiniteDistribution(n=2, ids=["a"], features=[[0.0]], marginal=[1.0], conditional=[[0.7, 0.3]])
    panel = ExpertPanel.from_costs(np.array([[[0.0], [1.0]]]), lower=0.0, upper=1.0)
    return d, panel


from hypothesis import settings

# numba dispatch and first-call compilation make early examples slow
settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
