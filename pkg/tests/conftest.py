import numpy as np
import pytest

from atombench.volume import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantoms():
    return [generate_phantom(PhantomSpec("smooth-noise", seed=s)) for s in range(10)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
