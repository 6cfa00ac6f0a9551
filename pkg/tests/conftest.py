import numpy as np
import pytest
from hypothesis import settings

from hitsurv.model import ModelSpec, model_a, model_b

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def spec_a():
    return model_a()


@pytest.fixture(scope="session")
def spec_b():
    return model_b()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def two_state(rate: str = "2") -> ModelSpec:
    """State 0 jumps straight into the terminal state 1."""
    return ModelSpec(
        name="two-state",
        n_states=2,
        terminal_set=frozenset({1}),
        rate=rate,
        transition=(("0", "1"), ("0", "1")),
    )


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
