import numpy as np
import pytest

from smdp_risk import Deterministic, Exponential, Uniform, Weibull
from smdp_risk.io import load_fixture
from smdp_risk.model import build_model

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_model():
    return load_fixture("maintenance")


@pytest.fixture(scope="session")
def maintenance(fixture_model):
    return fixture_model[0]


def constant_cost_model(c=1.0, alpha=0.5):
    """Two states, cost c everywhere; C_inf = c / alpha on every path."""
    return build_model(
        ["a", "b"],
        [["x"], ["y", "z"]],
        [[[0.3, 0.7]], [[0.5, 0.5], [1.0, 0.0]]],
        [[Weibull(1.5, 1.0)], [Exponential(2.0), Uniform(0.2, 1.0)]],
        [[c], [c, c]],
        c_bar=max(c, 1.0),
        alpha=alpha,
        name="constant",
    )


def one_state_model(cost=1.0, alpha=1.0, law=None, n_actions=1):
    law = law or Deterministic(np.log(2.0))
    return build_model(
        ["s"],
        [[f"a{k}" for k in range(n_actions)]],
        [[[1.0]] * n_actions],
        [[law] * n_actions],
        [[cost] * n_actions],
        c_bar=max(cost, 1.0),
        alpha=alpha,
        name="one",
    )


def zero_cost_model():
    return build_model(
        ["a", "b"],
        [["x", "y"], ["z"]],
        [[[0.2, 0.8], [1.0, 0.0]], [[0.5, 0.5]]],
        [[Exponential(1.0), Uniform(0.5, 1.5)], [Weibull(2.0, 1.0)]],
        [[0.0, 0.0], [0.0]],
        c_bar=1.0,
        alpha=0.5,
        name="zero",
    )
