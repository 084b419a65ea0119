"""N-jump problem: backward value iteration V_n = T V_{n-1} from V_0 = U(lam)."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

from smdp_risk.bellman import BellmanOperator, PolicyTable
from smdp_risk.model import SmdpModel
from smdp_risk.numerics import AugGrid, QuadratureRule, ValueTable, bracket_violation, lower_envelope
from smdp_risk.utility import Utility

logger = logging.getLogger(__name__)

BRACKET_ATOL = 1e-9


def _assert_bracket(table: ValueTable, utility: Utility, what: str) -> None:
    excess = bracket_violation(table, utility)
    if excess > BRACKET_ATOL * max(1.0, float(abs(table.values).max())):
        raise RuntimeError(f"{what} left the envelope bracket by {excess:.3g}")


def solve_finite(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    N: int,
    op: Optional[BellmanOperator] = None,
) -> Tuple[List[ValueTable], List[PolicyTable]]:
    """Optimal values V_0..V_N and minimizers f*_1..f*_N.

    policies[n - 1] is f*_n, the minimizer of V_{n-1}, i.e. the rule to use
    when n jumps remain. The optimal Markov policy in jump order is
    (f*_N, ..., f*_1); see `jump_order`. J_N(i) is values[N].origin()[i].
    """
    if N < 1:
        raise ValueError("horizon N must be at least 1")
    op = op or BellmanOperator(model, utility, grid, quad)
    values = [lower_envelope(grid, utility, model.n_states)]
    policies = []
    for n in range(1, N + 1):
        v, f = op.apply_T(values[-1])
        _assert_bracket(v, utility, f"V_{n}")
        values.append(v)
        policies.append(f)
        logger.debug("finite horizon step %d: J=%s", n, v.origin())
    return values, policies


def jump_order(policies: Sequence[PolicyTable]) -> List[PolicyTable]:
    """Time-to-go indexed minimizers -> the policy used at jumps 0, 1, ..."""
    return list(reversed(policies))


def evaluate_markov_policy(
    model: SmdpModel,
    utility: Utility,
    grid: AugGrid,
    quad: QuadratureRule,
    policy_seq: Sequence[PolicyTable],
    op: Optional[BellmanOperator] = None,
) -> ValueTable:
    """V_{n pi} = T_{f_0} T_{f_1} ... T_{f_{n-1}} U for policy_seq = (f_0, ..., f_{n-1})."""
    if len(policy_seq) == 0:
        raise ValueError("policy sequence is empty")
    op = op or BellmanOperator(model, utility, grid, quad)
    v = lower_envelope(grid, utility, model.n_states)
    for f in reversed(policy_seq):
        v = op.apply_Tf(v, f)
    return v
