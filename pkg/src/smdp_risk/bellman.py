"""One-jump operators on value tables over the augmented space.

For a table v, a node (w, lam) of state i and an action a,

    (L v)(i, w, lam, a) = sum_j P(j|i,a) * E_s[ v(j, w e^{-alpha s},
                              lam + C(i,a)/alpha * w (1 - e^{-alpha s})) ]

with v read off the table by interpolation that is linear in log(w + w_shift)
and linear in U(lam).
T_f picks a = f(i, w, lam); T minimizes over A(i) (ties go to the lowest
action index). Post-jump points with w below w_min take the tail value
U(lam' + w' m_j), where m_j is the optimal risk-neutral cost-to-go; every
output table is projected onto the envelope bracket
[U(lam), U(w c_bar/alpha + lam)], which contains all true value functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from smdp_risk.model import SmdpModel
from smdp_risk.numerics import (
    AugGrid,
    QuadratureRule,
    ValueTable,
    _w_bracket,
    interpolate,
    lower_envelope,
    tail_costs,
    upper_envelope,
    utility_weight,
)
from smdp_risk.utility import Utility


class GridMismatch(ValueError):
    pass


@dataclass
class PolicyTable:
    """Action index per (state, w-index, lam-index)."""

    grid: AugGrid
    choice: np.ndarray

    def __post_init__(self):
        self.choice = np.asarray(self.choice, dtype=np.intp)
        if self.choice.ndim != 3 or self.choice.shape[1:] != (self.grid.W, self.grid.L):
            raise ValueError("policy shape does not match its grid")

    @classmethod
    def constant(cls, grid: AugGrid, actions: Sequence[int]) -> "PolicyTable":
        """Stationary rule that ignores (w, lam)."""
        choice = np.empty((len(actions), grid.W, grid.L), dtype=np.intp)
        choice[:] = np.asarray(actions, dtype=np.intp)[:, None, None]
        return cls(grid, choice)

    def check(self, model: SmdpModel) -> None:
        if self.choice.shape[0] != model.n_states:
            raise ValueError("policy has the wrong number of states")
        for i in range(model.n_states):
            c = self.choice[i]
            if c.min() < 0 or c.max() >= model.n_actions(i):
                raise ValueError(f"policy picks an inadmissible action at {model.label(i)}")

    def lookup(self, i, w, lam):
        """Action at the nearest node in (log w, lam); vectorized."""
        g = self.grid
        x = g.w_coord(w)
        logw = g.log_w
        k = np.searchsorted(-logw, -x)
        k = np.clip(k, 1, g.W - 1)
        k = np.where(np.abs(logw[k - 1] - x) <= np.abs(logw[k] - x), k - 1, k)
        l = np.clip(np.rint(np.asarray(lam) / g.lam_step).astype(np.intp), 0, g.L - 1)
        return self.choice[i, k, l]

    def same_grid(self, grid: AugGrid) -> bool:
        return _same_grid(self.grid, grid)


def _same_grid(a: AugGrid, b: AugGrid) -> bool:
    return a is b or (
        a.w_nodes.shape == b.w_nodes.shape
        and a.lam_nodes.shape == b.lam_nodes.shape
        and np.array_equal(a.w_nodes, b.w_nodes)
        and np.array_equal(a.lam_nodes, b.lam_nodes)
    )


@dataclass
class _Plan:
    """Precomputed interpolation data for one (i, a) pair; K = sum_j M."""

    dest: np.ndarray  # (K,) successor state per atom
    k0: np.ndarray  # (W, K) lower w-node index
    t: np.ndarray  # (W, K) weight on the k0 + 1 node
    q: np.ndarray  # (W, K) integer lam shift in grid steps
    r: np.ndarray  # (W, K, L) or (W, K, 1) weight on the upper lam node
    weight: np.ndarray  # (W, K) probability weight; zero for tail atoms
    tail: np.ndarray  # (W, L) contribution of atoms that leave the grid


class BellmanOperator:
    """The L, T_f and T operators for one (model, utility, grid, quadrature)."""

    def __init__(
        self,
        model: SmdpModel,
        utility: Utility,
        grid: AugGrid,
        quad: QuadratureRule,
        clip: bool = True,
    ):
        if abs(grid.lam_reach - model.cost_horizon) > 1e-12 * max(1.0, model.cost_horizon):
            raise GridMismatch("grid lam_reach must equal c_bar/alpha of this model")
        self.model = model
        self.utility = utility
        self.grid = grid
        self.quad = quad
        self.clip = clip
        self.m_tail = tail_costs(model, quad)
        S = model.n_states
        self._lo = lower_envelope(grid, utility, 1).values[0]
        self._hi = upper_envelope(grid, utility, 1).values[0]
        self._plans = {(i, a): self._build_plan(i, a) for i, a in model.pairs()}
        self._lidx = np.arange(grid.L, dtype=np.intp)
        self.n_states = S

    def _build_plan(self, i: int, a: int) -> _Plan:
        g, m = self.grid, self.model
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
        y = d / g.lam_step
        qsh = np.floor(y).astype(np.intp)
        r = self._lam_weights(d, qsh, y - qsh)
        weight = np.where(below, 0.0, wt[None, :])
        # tail atoms: value U(lam + d + w' m_j), independent of the table
        tail = np.zeros((g.W, g.L))
        kk, cc = np.nonzero(below)
        if kk.size:
            arg = g.lam_nodes[None, :] + (d[kk, cc] + w_new[kk, cc] * self.m_tail[dest[cc]])[:, None]
            contrib = wt[cc][:, None] * self.utility(arg)
            np.add.at(tail, kk, contrib)
        return _Plan(dest=dest, k0=k0, t=t, q=qsh, r=r, weight=weight, tail=tail)

    def _lam_weights(self, d, qsh, r_lin):
        """Upper-node weights in the U(lam) coordinate for post-jump lam =
        lam_l + d. For exponential U they do not depend on l, so one slice
        (l = 0) is kept."""
        g, u = self.grid, self.utility
        if u.kind == "linear":
            return r_lin[..., None]
        lam = g.lam_nodes[:1] if u.kind == "exponential" else g.lam_nodes
        l0 = np.minimum(np.arange(lam.size)[None, None, :] + qsh[..., None], g.L - 1)
        l1 = np.minimum(l0 + 1, g.L - 1)
        post = lam[None, None, :] + d[..., None]
        r_lin = np.broadcast_to(r_lin[..., None], post.shape)
        return utility_weight(u, post, g.lam_nodes[l0], g.lam_nodes[l1], r_lin)

    def _check(self, v: ValueTable) -> None:
        if not _same_grid(v.grid, self.grid):
            raise GridMismatch("value table is on a different grid")
        if v.n_states != self.n_states:
            raise GridMismatch("value table has the wrong number of states")

    def action_value(self, v: ValueTable, i: int, a: int) -> np.ndarray:
        """(L v)(i, ., ., a) at every node, shape (W, L)."""
        self._check(v)
        p = self._plans[(i, a)]
        L = self.grid.L
        V = v.values
        # w-interpolated rows, shape (W, K, L)
        rows = V[p.dest[None, :], p.k0]
        rows *= (1.0 - p.t)[..., None]
        rows += p.t[..., None] * V[p.dest[None, :], p.k0 + 1]
        # lam shift by q + r grid steps, clamped at the top node
        i0 = np.minimum(self._lidx[None, None, :] + p.q[..., None], L - 1)
        i1 = np.minimum(i0 + 1, L - 1)
        lo = np.take_along_axis(rows, i0, axis=2)
        hi = np.take_along_axis(rows, i1, axis=2)
        vals = lo + p.r * (hi - lo)
        return np.einsum("wkl,wk->wl", vals, p.weight) + p.tail

    def action_values(self, v: ValueTable, i: int) -> np.ndarray:
        """Stack of (L v)(i, ., ., a) over a in A(i), shape (A(i), W, L)."""
        return np.stack([self.action_value(v, i, a) for a in range(self.model.n_actions(i))])

    def _project(self, out: np.ndarray) -> np.ndarray:
        if self.clip:
            np.clip(out, self._lo[None], self._hi[None], out=out)
        return out

    def apply_T(self, v: ValueTable) -> Tuple[ValueTable, PolicyTable]:
        S, g = self.n_states, self.grid
        out = np.empty((S, g.W, g.L))
        choice = np.empty((S, g.W, g.L), dtype=np.intp)
        for i in range(S):
            q = self.action_values(v, i)
            choice[i] = np.argmin(q, axis=0)
            out[i] = np.take_along_axis(q, choice[i][None], axis=0)[0]
        return ValueTable(g, self._project(out)), PolicyTable(g, choice)

    def apply_Tf(self, v: ValueTable, f: PolicyTable) -> ValueTable:
        if not f.same_grid(self.grid):
            raise GridMismatch("policy is on a different grid")
        S, g = self.n_states, self.grid
        out = np.empty((S, g.W, g.L))
        for i in range(S):
            fi = f.choice[i]
            for a in range(self.model.n_actions(i)):
                mask = fi == a
                if mask.any():
                    out[i][mask] = self.action_value(v, i, a)[mask]
        return ValueTable(g, self._project(out))

    def tail_value(self, i, w, lam):
        """U(lam + w m_i), the value used for w below w_min."""
        return self.utility(np.asarray(lam) + np.asarray(w) * self.m_tail[np.asarray(i)])

    def apply_L(self, v: ValueTable, i: int, w: float, lam: float, a: int) -> float:
        """Pointwise (L v)(i, w, lam, a) via direct interpolation.

        Independent of the vectorized plans; used to cross-check them.
        """
        self._check(v)
        m = self.model
        c = float(m.cost[i][a]) / m.alpha
        P = m.transition[i][a]
        total = 0.0
        for j in m.successors(i, a):
            s, q = self.quad[(i, a, j)]
            e = np.exp(-m.alpha * s)
            w_new = w * e
            lam_new = np.minimum(lam + c * w * (1.0 - e), self.grid.lam_max)
            vals = interpolate(v, np.full(s.size, j), w_new, lam_new, utility=self.utility)
            below = w_new < self.grid.w_min
            if np.any(below):
                vals = np.where(below, self.tail_value(j, w_new, lam + c * w * (1.0 - e)), vals)
            total += P[j] * float(np.sum(q * vals))
        return total


def apply_L(v: ValueTable, i: int, w: float, lam: float, a: int, quad, utility, model) -> float:
    return BellmanOperator(model, utility, v.grid, quad).apply_L(v, i, w, lam, a)


def apply_Tf(v: ValueTable, f: PolicyTable, quad, utility, model) -> ValueTable:
    return BellmanOperator(model, utility, v.grid, quad).apply_Tf(v, f)


def apply_T(v: ValueTable, quad, utility, model) -> Tuple[ValueTable, PolicyTable]:
    return BellmanOperator(model, utility, v.grid, quad).apply_T(v)


def argmin_lowest(values: Sequence[float]) -> Tuple[float, int]:
    """Minimum and the first index attaining it."""
    arr = np.asarray(values, dtype=float)
    k = int(np.argmin(arr))
    return float(arr[k]), k
