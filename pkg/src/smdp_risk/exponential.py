"""Exponential utility U(lam) = (1/gamma) e^{gamma lam}.

Values split as V(i, w, lam) = e^{gamma lam} h(i, w), so iteration runs on
h over (state, w) only:

    h'(i, w) = min_a sum_j P(j|i,a) E_s[ e^{gamma C(i,a)/alpha w (1 - e^{-alpha s})}
                                         h(j, w e^{-alpha s}) ]

starting from h = 1/gamma (lower) and h = (1/gamma) e^{gamma w c_bar/alpha}.
When |gamma| c_bar / alpha exceeds `log_threshold` the iteration runs on
log|h| to keep the exponentials finite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from smdp_risk.bellman import PolicyTable
from smdp_risk.model import Assumption1Certificate, SmdpModel, certify_assumption1
from smdp_risk.numerics import AugGrid, QuadratureRule, _w_bracket, tail_costs
from smdp_risk.solver_infinite import NonConvergence, SandwichResult, error_bound
from smdp_risk.utility import Utility

logger = logging.getLogger(__name__)

LOG_THRESHOLD = 30.0


@dataclass
class HTable:
    """h(i, w) on the w nodes of `grid`, stored as log|h| with sign(gamma)."""

    grid: AugGrid
    gamma: float
    log_abs: np.ndarray

    def __post_init__(self):
        self.log_abs = np.asarray(self.log_abs, dtype=float)
        if self.log_abs.ndim != 2 or self.log_abs.shape[1] != self.grid.W:
            raise ValueError("h table shape does not match the grid")

    @classmethod
    def from_values(cls, grid: AugGrid, gamma: float, values) -> "HTable":
        values = np.asarray(values, dtype=float)
        if np.any(np.sign(values) != np.sign(gamma)):
            raise ValueError("h must carry the sign of gamma")
        return cls(grid, gamma, np.log(np.abs(values)))

    @property
    def values(self) -> np.ndarray:
        return np.sign(self.gamma) * np.exp(self.log_abs)

    @property
    def n_states(self) -> int:
        return self.log_abs.shape[0]

    def origin(self) -> np.ndarray:
        """h(i, w=1) = J_inf(i)."""
        return self.values[:, 0].copy()

    def envelopes(self):
        return h_envelopes(self.grid, self.gamma, self.n_states)


def h_envelopes(grid: AugGrid, gamma: float, n_states: int):
    """log|h| of the two envelopes: 1/gamma and (1/gamma) e^{gamma w R}."""
    base = -np.log(abs(gamma))
    a = np.full((n_states, grid.W), base)
    b = base + gamma * grid.w_nodes[None, :] * grid.lam_reach * np.ones((n_states, 1))
    return a, b


@dataclass
class _HPlan:
    dest: np.ndarray  # (K,)
    k0: np.ndarray  # (W, K)
    t: np.ndarray  # (W, K)
    log_weight: np.ndarray  # (W, K) log(P q) + gamma * cost increment
    below: np.ndarray  # (W, K) atom leaves the grid
    log_tail: np.ndarray  # (W, K) log|tail h| for atoms that leave


class ExponentialOperator:
    def __init__(
        self,
        model: SmdpModel,
        gamma: float,
        grid: AugGrid,
        quad: QuadratureRule,
        log_threshold: float = LOG_THRESHOLD,
    ):
        if gamma == 0:
            raise ValueError("gamma must be nonzero")
        self.model = model
        self.gamma = float(gamma)
        self.grid = grid
        self.quad = quad
        self.log_domain = abs(gamma) * model.cost_horizon > log_threshold
        if self.log_domain:
            logger.warning(
                "|gamma| c_bar/alpha = %.3g exceeds %.3g; iterating on log|h|",
                abs(gamma) * model.cost_horizon,
                log_threshold,
            )
        self.m_tail = tail_costs(model, quad)
        self._env = h_envelopes(grid, self.gamma, model.n_states)
        self._plans = {(i, a): self._build(i, a) for i, a in model.pairs()}

    def _build(self, i, a) -> _HPlan:
        g, m, gam = self.grid, self.model, self.gamma
        dest, disc, wts = [], [], []
        P = m.transition[i][a]
        for j in m.successors(i, a):
            s, q = self.quad[(i, a, j)]
            dest.append(np.full(s.size, j, dtype=np.intp))
            disc.append(np.exp(-m.alpha * s))
            wts.append(P[j] * q)
        dest = np.concatenate(dest)
        e = np.concatenate(disc)
        wt = np.concatenate(wts)
        wk = g.w_nodes[:, None]
        w_new = wk * e[None, :]
        d = (float(m.cost[i][a]) / m.alpha) * wk * (1.0 - e[None, :])
        below = w_new < g.w_min
        k0, t = _w_bracket(g, np.maximum(w_new, g.w_min))
        log_tail = -np.log(abs(gam)) + gam * w_new * self.m_tail[dest][None, :]
        return _HPlan(dest, k0, t, np.log(wt)[None, :] + gam * d, below, log_tail)

    def action_log_values(self, h: HTable, i: int, a: int) -> np.ndarray:
        """log|sum ...| for action a at every w node, shape (W,)."""
        p = self._plans[(i, a)]
        if self.log_domain:
            la = h.log_abs
            inner = (1.0 - p.t) * la[p.dest[None, :], p.k0] + p.t * la[p.dest[None, :], p.k0 + 1]
        else:
            hv = np.abs(h.values)
            inner = np.log((1.0 - p.t) * hv[p.dest[None, :], p.k0] + p.t * hv[p.dest[None, :], p.k0 + 1])
        inner = np.where(p.below, p.log_tail, inner)
        return logsumexp(p.log_weight + inner, axis=1)

    def step(self, h: HTable):
        """One application of the h-operator; returns (HTable, (S, W) argmin)."""
        S, W = self.model.n_states, self.grid.W
        out = np.empty((S, W))
        choice = np.empty((S, W), dtype=np.intp)
        for i in range(S):
            q = np.stack([self.action_log_values(h, i, a) for a in range(self.model.n_actions(i))])
            # min h: smallest |h| if gamma > 0, largest |h| if gamma < 0
            key = q if self.gamma > 0 else -q
            choice[i] = np.argmin(key, axis=0)
            out[i] = np.take_along_axis(q, choice[i][None], axis=0)[0]
        a, b = self._env
        out = np.clip(out, np.minimum(a, b), np.maximum(a, b))
        return HTable(self.grid, self.gamma, out), choice


def h_step(h: HTable, model: SmdpModel, quad: QuadratureRule, op: Optional[ExponentialOperator] = None) -> HTable:
    op = op or ExponentialOperator(model, h.gamma, h.grid, quad)
    return op.step(h)[0]


def expand_policy(grid: AugGrid, choice_iw: np.ndarray) -> PolicyTable:
    """Broadcast an (S, W) rule over the lam axis."""
    return PolicyTable(grid, np.repeat(np.asarray(choice_iw)[:, :, None], grid.L, axis=2))


@dataclass
class ExponentialResult:
    lower: HTable
    upper: HTable
    n_iters: int
    gap: float
    choice: np.ndarray  # (S, W) argmin of the final lower table
    history: List[dict] = field(default_factory=list)
    log_domain: bool = False

    @property
    def h(self) -> HTable:
        if self.log_domain:
            mid = 0.5 * (self.lower.log_abs + self.upper.log_abs)
            return HTable(self.lower.grid, self.lower.gamma, mid)
        return HTable.from_values(self.lower.grid, self.lower.gamma, 0.5 * (self.lower.values + self.upper.values))

    @property
    def policy(self) -> PolicyTable:
        return expand_policy(self.lower.grid, self.choice)

    def J(self) -> np.ndarray:
        return self.h.origin()


def solve_exponential(
    model: SmdpModel,
    gamma: float,
    grid: AugGrid,
    quad: QuadratureRule,
    cert: Optional[Assumption1Certificate] = None,
    tol: float = 1e-4,
    max_iter: int = 10000,
    log_threshold: float = LOG_THRESHOLD,
) -> ExponentialResult:
    """Sandwich iteration for h_inf; J_inf(i) = h_inf(i, w=1).

    The gap is max |upper - lower| on h, or on log|h| in log-domain mode.
    """
    cert = cert or certify_assumption1(model)
    op = ExponentialOperator(model, gamma, grid, quad, log_threshold)
    a, b = op._env
    lower = HTable(grid, gamma, a.copy())
    upper = HTable(grid, gamma, b.copy())

    def gap_of(lo, up):
        if op.log_domain:
            return float(np.max(np.abs(up.log_abs - lo.log_abs)))
        return float(np.max(np.abs(up.values - lo.values)))

    utility = Utility.exponential(gamma)
    history = []
    gap = gap_of(lower, upper)
    for n in range(1, max_iter + 1):
        lower, _ = op.step(lower)
        upper, _ = op.step(upper)
        gap = gap_of(lower, upper)
        # at lam = 0 the h gap equals the value gap, so delta_n/eps_n bound it
        bound = float(np.max(error_bound(utility, model, cert, n, grid.w_nodes, 0.0)))
        history.append({"n": n, "gap": gap, "bound": bound})
        logger.debug("solve_exponential sweep %d: gap %.3e", n, gap)
        if gap <= tol:
            _, choice = op.step(lower)
            return ExponentialResult(lower, upper, n, gap, choice, history, op.log_domain)
    raise NonConvergence(f"solve_exponential: gap {gap:.3e} > tol {tol:.3e} after {max_iter} sweeps", gap=gap)


def split_values(h: HTable) -> np.ndarray:
    """e^{gamma lam} h(i, w) on the full (S, W, L) grid."""
    lam = h.grid.lam_nodes
    return h.values[:, :, None] * np.exp(h.gamma * lam)[None, None, :]


def splitting_residual(general: SandwichResult, split: ExponentialResult, reachable_only: bool = True) -> float:
    """max |V_general(i, w, lam) - e^{gamma lam} h_inf(i, w)| over nodes."""
    diff = np.abs(general.value.values - split_values(split.h))
    if reachable_only:
        diff = diff[:, general.lower.grid.reachable()]
    return float(diff.max())


def lambda_dependence(op, table, policy: PolicyTable, tie_tol: float) -> float:
    """Worst excess, over (i, w) slices, of the L-value of the slice's
    first-lambda action above the minimal L-value at any reachable lam node
    (relative to max(|min|, 1)).

    Zero (up to tie_tol) means one action per (i, w) is optimal for every
    lam, i.e. the policy does not depend on accumulated cost.
    """
    mask = table.grid.reachable()
    worst = 0.0
    for i in range(op.model.n_states):
        q = op.action_values(table, i)  # (A, W, L)
        best = q.min(axis=0)
        a0 = policy.choice[i, :, 0]
        chosen = np.take_along_axis(q, a0[None, :, None].repeat(q.shape[2], axis=2), axis=0)[0]
        rel = (chosen - best) / np.maximum(np.abs(best), 1.0)
        worst = max(worst, float(rel[mask].max()))
    return worst - tie_tol
