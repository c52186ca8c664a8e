import numpy as np
import pytest

from metapopsim.landscape import FiniteChain
from metapopsim.patch import PatchTraits, phase_exponential


def random_chain(rng, m, sparse=False):
    """Irreducible chain: random rows mixed with a cycle so every state is reachable."""
    P = rng.dirichlet(np.ones(m), size=m)
    if sparse:
        P = P * (rng.random((m, m)) < 0.3)
    cycle = np.roll(np.eye(m), 1, axis=1)
    P = 0.8 * P + 0.2 * cycle
    P /= P.sum(axis=1, keepdims=True)
    return FiniteChain.from_matrix(P)


def random_traits(rng, m, s_max=0.9, a_max=5.0, per_state_rate=False):
    rate = rng.uniform(0.2, 2.0, size=m) if per_state_rate else float(rng.uniform(0.2, 2.0))
    return PatchTraits.tabular(rng.uniform(0.0, s_max, size=m), rng.uniform(0.1, a_max, size=m),
                               phase_exponential(rate))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TWO_STATE = np.array([[0.75, 0.25], [0.5, 0.5]])
CYCLE3 = np.roll(np.eye(3), 1, axis=1)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
