import math

import numpy as np
import pytest

from smdp_risk import (
    BellmanOperator,
    Deterministic,
    PolicyTable,
    Utility,
    build_grid,
    build_quadrature,
    estimate_value,
    evaluate_markov_policy,
    solve_finite,
)
from smdp_risk.numerics import lower_envelope, upper_envelope
from smdp_risk.solver_finite import jump_order
from smdp_risk.solver_infinite import grid_budget

from conftest import one_state_model, zero_cost_model

U_EXP = Utility.exponential(1.0)


@pytest.fixture(scope="module")
def setup(maintenance):
    g, q = build_grid(maintenance, 20, 16), build_quadrature(maintenance, 20)
    return maintenance, g, q, BellmanOperator(maintenance, U_EXP, g, q)


def test_one_jump_closed_form():
    m = one_state_model(cost=1.0, alpha=1.0, law=Deterministic(math.log(2)))
    g, q = build_grid(m, 8, 9), build_quadrature(m, 4)
    values, policies = solve_finite(m, Utility.linear(), g, q, 1)
    assert values[1].origin()[0] == pytest.approx(0.5)
    assert len(policies) == 1


def test_zero_cost_gives_U():
    m = zero_cost_model()
    g, q = build_grid(m, 8, 6), build_quadrature(m, 8)
    values, _ = solve_finite(m, U_EXP, g, q, 4)
    for v in values:
        assert np.allclose(v.values, lower_envelope(g, U_EXP, 2).values, rtol=1e-12)


def test_horizon_must_be_positive(maintenance):
    g, q = build_grid(maintenance, 6, 6), build_quadrature(maintenance, 6)
    with pytest.raises(ValueError):
        solve_finite(maintenance, U_EXP, g, q, 0)
    with pytest.raises(ValueError):
        evaluate_markov_policy(maintenance, U_EXP, g, q, [])


def test_monotone_in_horizon_and_bracketed(setup):
    m, g, q, op = setup
    values, _ = solve_finite(m, U_EXP, g, q, 6, op=op)
    hi = upper_envelope(g, U_EXP, 2).values
    for a, b in zip(values, values[1:]):
        assert np.all(b.values >= a.values - 1e-12)
        assert np.all(b.values <= hi + 1e-9)


def test_optimal_sequence_evaluates_to_V_N(setup):
    m, g, q, op = setup
    values, policies = solve_finite(m, U_EXP, g, q, 5, op=op)
    v = evaluate_markov_policy(m, U_EXP, g, q, jump_order(policies), op=op)
    assert np.max(np.abs(v.values - values[5].values)) <= 1e-12


def test_random_policies_are_no_better(setup):
    m, g, q, op = setup
    N = 4
    values, _ = solve_finite(m, U_EXP, g, q, N, op=op)
    rng = np.random.default_rng(7)
    for _ in range(20):
        seq = [
            PolicyTable(g, np.stack([rng.integers(0, m.n_actions(i), (g.W, g.L)) for i in range(2)]))
            for _ in range(N)
        ]
        v = evaluate_markov_policy(m, U_EXP, g, q, seq, op=op)
        assert np.all(v.values >= values[N].values - 1e-12)


def test_matches_monte_carlo(maintenance):
    """V_5 at the origin against simulation of the computed optimal policy."""
    m, u, N = maintenance, U_EXP, 5
    g, q = build_grid(m, 32, 32), build_quadrature(m, 32)
    values, policies = solve_finite(m, u, g, q, N)
    budget = grid_budget(lambda gg, qq: solve_finite(m, u, gg, qq, N)[0][N], m, u, g, q, fine=values[N])
    seq = jump_order(policies)
    for x0 in range(m.n_states):
        est = estimate_value(m, u, seq, N=N, n_traj=100000, seed=3 + x0, x0=x0)
        dp = values[N].origin()[x0]
        assert abs(est.mean - dp) <= 3 * est.se + budget.total, (x0, est.mean, est.se, dp, budget)
