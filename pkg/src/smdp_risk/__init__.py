"""Risk-sensitive semi-Markov decision processes with discounted cost.

Value iteration on the augmented state (discount weight, state, accumulated
cost) for general concave/convex utilities, a split solver for the
exponential utility, and a Monte Carlo trajectory engine used as an
independent check.
"""

from smdp_risk.model import (
    Assumption1Certificate,
    Deterministic,
    Exponential,
    Mixture,
    NoCertificate,
    SmdpModel,
    Uniform,
    Weibull,
    certify_assumption1,
    default_delta,
    validate,
)
from smdp_risk.utility import Utility
from smdp_risk.numerics import AugGrid, QuadratureRule, ValueTable, build_grid, build_quadrature
from smdp_risk.bellman import BellmanOperator, PolicyTable
from smdp_risk.solver_finite import evaluate_markov_policy, solve_finite
from smdp_risk.solver_infinite import (
    NonConvergence,
    SandwichResult,
    error_bound,
    evaluate_stationary,
    improve_policy,
    policy_iteration,
    solve_infinite,
)
from smdp_risk.exponential import HTable, h_step, solve_exponential
from smdp_risk.simulate import estimate_value, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "Assumption1Certificate",
    "AugGrid",
    "BellmanOperator",
    "Deterministic",
    "Exponential",
    "HTable",
    "Mixture",
    "NoCertificate",
    "NonConvergence",
    "PolicyTable",
    "QuadratureRule",
    "SandwichResult",
    "SmdpModel",
    "Uniform",
    "Utility",
    "ValueTable",
    "Weibull",
    "build_grid",
    "build_quadrature",
    "certify_assumption1",
    "default_delta",
    "error_bound",
    "estimate_value",
    "evaluate_markov_policy",
    "evaluate_stationary",
    "h_step",
    "improve_policy",
    "policy_iteration",
    "sample_trajectory",
    "solve_exponential",
    "solve_finite",
    "solve_infinite",
    "validate",
]
