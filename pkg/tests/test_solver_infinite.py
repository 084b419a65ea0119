import math

import numpy as np
import pytest

from smdp_risk import (
    Assumption1Certificate,
    BellmanOperator,
    Exponential,
    NonConvergence,
    PolicyTable,
    Utility,
    build_grid,
    build_quadrature,
    error_bound,
    evaluate_stationary,
    improve_policy,
    policy_iteration,
    solve_infinite,
)
from smdp_risk.model import build_model
from smdp_risk.numerics import lower_envelope
from smdp_risk.solver_infinite import evaluate_stationary_sandwich, infinite_budget

from conftest import constant_cost_model, one_state_model, zero_cost_model

U_EXP = Utility.exponential(1.0)
CERT = Assumption1Certificate(delta=math.log(2), epsilon=0.5)


@pytest.fixture(scope="module")
def fixture_solution(maintenance):
    g, q = build_grid(maintenance, 16, 16), build_quadrature(maintenance, 16)
    op = BellmanOperator(maintenance, U_EXP, g, q)
    res = solve_infinite(maintenance, U_EXP, g, q, tol=1e-4, op=op)
    return maintenance, g, q, op, res


class TestErrorBound:
    m = one_state_model(cost=1.0, alpha=1.0)

    def test_linear_example(self):
        assert CERT.rho(1.0) == pytest.approx(0.75)
        assert error_bound(Utility.linear(), self.m, CERT, 2, 1.0, 0.0) == pytest.approx(0.5625)

    def test_n_zero_is_full_envelope(self):
        for u in (Utility.linear(), Utility.log1p(), Utility.power(2.0)):
            slope = u.deriv_left(0.0) if u.is_concave else u.deriv_right(1.0)
            assert error_bound(u, self.m, CERT, 0, 1.0, 0.0) == pytest.approx(slope * 1.0)

    def test_convex_example(self):
        assert error_bound(U_EXP, self.m, CERT, 1, 1.0, 0.0) == pytest.approx(math.e * 0.75)

    def test_negative_n(self):
        with pytest.raises(ValueError):
            error_bound(U_EXP, self.m, CERT, -1, 1.0, 0.0)


class TestSolveInfinite:
    def test_zero_cost(self):
        m = zero_cost_model()
        g, q = build_grid(m, 8, 6), build_quadrature(m, 8)
        for u in (Utility.linear(), Utility.log1p(), U_EXP):
            res = solve_infinite(m, u, g, q, tol=1e-6)
            assert np.allclose(res.lower.values, lower_envelope(g, u, 2).values, rtol=1e-12)
            assert np.all(res.upper.values - res.lower.values <= 1e-6)

    @pytest.mark.parametrize("u,exact", [(Utility.linear(), 2.0), (U_EXP, math.exp(2.0))])
    def test_constant_cost(self, u, exact):
        m = constant_cost_model()
        g, q = build_grid(m, 32, 32), build_quadrature(m, 32)
        res = solve_infinite(m, u, g, q, tol=1e-4)
        budget = infinite_budget(m, u, g, q, result=res, tol=1e-4)
        assert np.all(np.abs(res.J() - exact) <= 1e-4 + budget.total)

    def test_sandwich_invariants(self, fixture_solution):
        m, g, q, op, res = fixture_solution
        assert np.all(res.lower.values <= res.upper.values + 1e-12) and res.gap >= 0
        assert res.gap <= 1e-4
        assert res.residual <= 2e-4

    def test_history_monotone(self, maintenance):
        g, q = build_grid(maintenance, 10, 10), build_quadrature(maintenance, 10)
        res = solve_infinite(maintenance, Utility.log1p(), g, q, tol=1e-3, keep_history=True)
        for a, b in zip(res.lower_history, res.lower_history[1:]):
            assert np.all(b.values >= a.values - 1e-12)
        for a, b in zip(res.upper_history, res.upper_history[1:]):
            assert np.all(b.values <= a.values + 1e-12)
        assert [h["n"] for h in res.history] == list(range(1, res.n_iters + 1))

    def test_nonconvergence(self, maintenance):
        g, q = build_grid(maintenance, 6, 6), build_quadrature(maintenance, 6)
        with pytest.raises(NonConvergence) as info:
            solve_infinite(maintenance, U_EXP, g, q, tol=1e-8, max_iter=3)
        assert info.value.gap > 1e-8 and info.value.bound > 0
        assert info.value.result.n_iters == 3

    def test_bad_tol(self, maintenance):
        g, q = build_grid(maintenance, 6, 6), build_quadrature(maintenance, 6)
        with pytest.raises(ValueError):
            solve_infinite(maintenance, U_EXP, g, q, tol=0.0)


class TestEvaluation:
    def test_single_action_matches_solve(self):
        m = build_model(["a", "b"], [["x"], ["y"]], [[[0.3, 0.7]], [[0.5, 0.5]]],
                        [[Exponential(1.0)], [Exponential(2.0)]], [[0.2], [0.7]], 1.0, 0.5)
        g, q = build_grid(m, 12, 12), build_quadrature(m, 12)
        res = solve_infinite(m, U_EXP, g, q, tol=1e-5)
        v = evaluate_stationary(m, U_EXP, g, q, PolicyTable.constant(g, [0, 0]), tol=1e-5)
        assert np.max(np.abs(v.values - res.value.values)) <= 2e-5
        assert improve_policy(m, U_EXP, g, q, PolicyTable.constant(g, [0, 0]), tol=1e-5)[1] is False

    def test_optimal_policy_value(self, fixture_solution):
        m, g, q, op, res = fixture_solution
        sw = evaluate_stationary_sandwich(m, U_EXP, g, q, res.policy, tol=1e-4, op=op)
        assert sw.gap <= 1e-4
        budget = infinite_budget(m, U_EXP, g, q, result=res)
        assert np.max(np.abs(sw.value.values - res.value.values)[:, g.reachable()]) <= 2e-4 + budget.interpolation

    def test_bad_policy_is_worse(self, fixture_solution):
        m, g, q, op, res = fixture_solution
        worst = None
        for c in [(a, b) for a in range(2) for b in range(2)]:
            v = evaluate_stationary(m, U_EXP, g, q, PolicyTable.constant(g, list(c)), op=op)
            assert np.all(v.values >= res.value.values - 2e-4)
            if worst is None or v.origin().sum() > worst.origin().sum():
                worst = v
        assert np.any(worst.values > res.value.values + 1e-3)

    def test_optimal_is_not_improved(self, fixture_solution):
        m, g, q, op, res = fixture_solution
        _, improved = improve_policy(m, U_EXP, g, q, res.policy, tol=1e-4, op=op)
        assert improved is False

    def test_policy_iteration_monotone(self, fixture_solution):
        m, g, q, op, res = fixture_solution
        rounds = policy_iteration(m, U_EXP, g, q, PolicyTable.constant(g, [1, 1]), tol=1e-4, max_rounds=5, op=op)
        assert len(rounds) >= 2
        for (_, a), (_, b) in zip(rounds, rounds[1:]):
            assert np.all(b.values <= a.values + 2e-4)
        budget = infinite_budget(m, U_EXP, g, q, result=res)
        assert np.all(np.abs(rounds[-1][1].origin() - res.J()) <= budget.total)
