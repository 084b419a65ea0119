"""Infinite-horizon values by sandwich iteration.

T^n U increases and T^n vbar decreases to V_inf, where vbar(w, lam) =
U(w c_bar/alpha + lam). Iteration stops on the computed gap; the analytic
envelope (eps_n for concave, delta_n for convex utilities) is carried along
as a certificate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from smdp_risk.bellman import BellmanOperator, PolicyTable
from smdp_risk.model import Assumption1Certificate, SmdpModel, certify_assumption1
from smdp_risk.numerics import (
    AugGrid,
    QuadratureRule,
    ValueTable,
    build_grid,
    build_quadrature,
    clamp_error,
    interpolate,
    lower_envelope,
    upper_envelope,
)
from smdp_risk.solver_finite import _assert_bracket
from smdp_risk.utility import Utility

logger = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """The sandwich gap did not reach the tolerance within max_iter sweeps."""

    def __init__(self, message, gap=None, bound=None, result=None):
        super().__init__(message)
        self.gap = gap
        self.bound = bound
        self.result = result


def error_bound(utility: Utility, model: SmdpModel, cert: Assumption1Certificate, n: int, w, lam):
    """eps_n (concave or linear U) or delta_n (convex U) at (w, lam).

    With rho = 1 - eps + eps e^{-alpha delta} and R = c_bar/alpha:
        concave: U'_-(lam) * w R * rho^n
        convex:  U'_+(w R + lam) * w R * rho^n
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    R = model.cost_horizon
    rho = cert.rho(model.alpha)
    if utility.is_concave:
        slope = utility.deriv_left(lam)
    elif utility.is_convex:
        slope = utility.deriv_right(w * R + lam)
    else:
        raise ValueError("utility shape must be concave or convex")
    return slope * w * R * rho**n


@dataclass
class SandwichResult:
    lower: ValueTable
    upper: ValueTable
    n_iters: int
    gap: float
    bound: np.ndarray
    policy: Optional[PolicyTable]
    history: List[dict] = field(default_factory=list)
    residual: float = float("nan")
    lower_history: List[ValueTable] = field(default_factory=list)
    upper_history: List[ValueTable] = field(default_factory=list)

    @property
    def value(self) -> ValueTable:
        """Midpoint estimate (lower + upper) / 2."""
        return ValueTable(self.lower.grid, 0.5 * (self.lower.values + self.upper.values))

    @property
    def half_gap(self) -> float:
        return 0.5 * self.gap

    def J(self) -> np.ndarray:
        return self.value.origin()


def _bound_table(utility, model, cert, n, grid) -> np.ndarray:
    ww, ll = grid.mesh()
    return error_bound(utility, model, cert, n, ww, ll)


def _sandwich(
    step: Callable[[ValueTable], ValueTable],
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    cert: Assumption1Certificate,
    tol: float,
    max_iter: int,
    keep_history: bool,
    what: str,
) -> SandwichResult:
    if not tol > 0:
        raise ValueError("tol must be positive")
    S = model.n_states
    lower = lower_envelope(grid, utility, S)
    upper = upper_envelope(grid, utility, S)
    gap = float(np.max(upper.values - lower.values))
    result = SandwichResult(lower, upper, 0, gap, _bound_table(utility, model, cert, 0, grid), None)
    if keep_history:
        result.lower_history.append(lower)
        result.upper_history.append(upper)
    for n in range(1, max_iter + 1):
        lower = step(lower)
        upper = step(upper)
        _assert_bracket(lower, utility, f"{what} lower_{n}")
        _assert_bracket(upper, utility, f"{what} upper_{n}")
        gap = float(np.max(upper.values - lower.values))
        bound = _bound_table(utility, model, cert, n, grid)
        result.lower, result.upper, result.n_iters, result.gap, result.bound = lower, upper, n, gap, bound
        result.history.append({"n": n, "gap": gap, "bound": float(bound.max())})
        if keep_history:
            result.lower_history.append(lower)
            result.upper_history.append(upper)
        logger.debug("%s sweep %d: gap %.3e, analytic bound %.3e", what, n, gap, bound.max())
        if gap <= tol:
            return result
    raise NonConvergence(
        f"{what}: gap {gap:.3e} > tol {tol:.3e} after {max_iter} sweeps (analytic bound {result.bound.max():.3e})",
        gap=gap,
        bound=float(result.bound.max()),
        result=result,
    )


def solve_infinite(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    cert: Optional[Assumption1Certificate] = None,
    tol: float = 1e-4,
    max_iter: int = 10000,
    keep_history: bool = False,
    op: Optional[BellmanOperator] = None,
) -> SandwichResult:
    """Sandwich iteration for V_inf; the policy is the argmin of the final
    lower table and J_inf(i) is `result.J()[i]`."""
    cert = cert or certify_assumption1(model)
    op = op or BellmanOperator(model, utility, grid, quad)

    def step(v):
        return op.apply_T(v)[0]

    result = _sandwich(step, model, utility, grid, cert, tol, max_iter, keep_history, "solve_infinite")
    t_lower, policy = op.apply_T(result.lower)
    result.policy = policy
    result.residual = float(np.max(np.abs(t_lower.values - result.lower.values)))
    logger.info("solve_infinite: %d sweeps, gap %.3e, J=%s", result.n_iters, result.gap, result.J())
    return result


def evaluate_stationary_sandwich(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    cert: Optional[Assumption1Certificate] = None,
    tol: float = 1e-4,
    max_iter: int = 10000,
    op: Optional[BellmanOperator] = None,
) -> SandwichResult:
    cert = cert or certify_assumption1(model)
    op = op or BellmanOperator(model, utility, grid, quad)
    f.check(model)

    def step(v):
        return op.apply_Tf(v, f)

    result = _sandwich(step, model, utility, grid, cert, tol, max_iter, False, "evaluate_stationary")
    result.policy = f
    return result


def evaluate_stationary(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    tol: float = 1e-4,
    max_iter: int = 10000,
    cert: Optional[Assumption1Certificate] = None,
    op: Optional[BellmanOperator] = None,
) -> ValueTable:
    """V_f, the fixed point of T_f, as the midpoint of its sandwich."""
    return evaluate_stationary_sandwich(model, utility, grid, quad, f, cert, tol, max_iter, op).value


def improve_policy(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    f: PolicyTable,
    tol: float = 1e-4,
    margin: Optional[float] = None,
    value: Optional[ValueTable] = None,
    op: Optional[BellmanOperator] = None,
) -> Tuple[PolicyTable, bool]:
    """One policy-improvement step.

    A node switches to its minimizing action only when that action's
    L-value undercuts V_f there by more than `margin` (default 10 * tol);
    smaller differences are discretization noise.
    """
    op = op or BellmanOperator(model, utility, grid, quad)
    margin = 10.0 * tol if margin is None else margin
    if value is None:
        value = evaluate_stationary(model, utility, grid, quad, f, tol=tol, op=op)
    choice = f.choice.copy()
    for i in range(model.n_states):
        q = op.action_values(value, i)
        best = np.argmin(q, axis=0)
        best_val = np.take_along_axis(q, best[None], axis=0)[0]
        switch = (best_val < value.values[i] - margin) & (best != choice[i])
        choice[i] = np.where(switch, best, choice[i])
    h = PolicyTable(grid, choice)
    return h, bool(np.any(choice != f.choice))


def policy_iteration(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    f0: PolicyTable,
    tol: float = 1e-4,
    max_rounds: int = 20,
    margin: Optional[float] = None,
    op: Optional[BellmanOperator] = None,
    max_iter: int = 10000,
) -> List[Tuple[PolicyTable, ValueTable]]:
    """Repeated improve_policy from f0; returns [(f_k, V_{f_k}), ...] up to
    and including the first policy that no longer changes."""
    op = op or BellmanOperator(model, utility, grid, quad)
    f = f0
    v = evaluate_stationary(model, utility, grid, quad, f, tol=tol, max_iter=max_iter, op=op)
    rounds = [(f, v)]
    for _ in range(max_rounds):
        f, improved = improve_policy(model, utility, grid, quad, f, tol=tol, margin=margin, value=v, op=op)
        if not improved:
            break
        v = evaluate_stationary(model, utility, grid, quad, f, tol=tol, max_iter=max_iter, op=op)
        rounds.append((f, v))
    return rounds


@dataclass
class GridBudget:
    """Discretization error estimate for a table computed on `grid`.

    interpolation: max over reachable nodes of |fine - coarse| where the
    coarse run halves W, L and M; tail: the rigorous bound on the w < w_min
    treatment; origin: per-state |J_fine - J_coarse|.
    """

    interpolation: float
    tail: float
    origin: np.ndarray

    @property
    def total(self) -> float:
        return self.interpolation + self.tail


def coarse_setup(model: SmdpModel, grid: AugGrid, quad: QuadratureRule) -> Tuple[AugGrid, QuadratureRule]:
    coarse = build_grid(model, max(2, math.ceil(grid.W / 2)), max(2, math.ceil(grid.L_reach / 2)), grid.w_min, w_shift=grid.w_shift)
    return coarse, build_quadrature(model, max(1, math.ceil(quad.M / 2)))


def grid_budget(
    compute: Callable[[AugGrid, QuadratureRule], ValueTable],
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    fine: Optional[ValueTable] = None,
) -> GridBudget:
    """Estimate the error of `compute(grid, quad)` by rerunning it on a grid
    with half the nodes and atoms in every direction."""
    fine = fine if fine is not None else compute(grid, quad)
    cgrid, cquad = coarse_setup(model, grid, quad)
    coarse = compute(cgrid, cquad)
    ww, ll = grid.mesh()
    mask = grid.reachable()
    worst = 0.0
    for i in range(model.n_states):
        ci = interpolate(coarse, np.full(ww.shape, i), ww, ll, utility=utility)
        worst = max(worst, float(np.max(np.abs(fine.values[i] - ci)[mask])))
    return GridBudget(
        interpolation=worst,
        tail=clamp_error(grid, utility),
        origin=np.abs(fine.origin() - coarse.origin()),
    )


def infinite_budget(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    result: Optional[SandwichResult] = None,
    tol: float = 1e-4,
    cert: Optional[Assumption1Certificate] = None,
) -> GridBudget:
    """grid_budget for solve_infinite's midpoint value."""
    cert = cert or certify_assumption1(model)

    def compute(g, q):
        return solve_infinite(model, utility, g, q, cert=cert, tol=tol).value

    fine = result.value if result is not None else None
    return grid_budget(compute, model, utility, grid, quad, fine=fine)
