"""Discretization of the augmented coordinates and of the sojourn kernel.

Elapsed time t is carried as the discount weight w = exp(-alpha t) in
(0, 1]; accumulated discounted cost lam reached from lam = 0 stays in
[0, R] with R = c_bar / alpha. The lam axis carries a few headroom nodes
above R so that interpolation stencils near the reachable boundary never
see values distorted by clamping at the top node. Tables are interpolated
bilinearly in (log w, lam).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from smdp_risk.model import SmdpModel
from smdp_risk.utility import Utility

LAM_SLACK = 1e-12
W_SHIFT = 0.1


@dataclass(frozen=True)
class AugGrid:
    """Tensor grid over (w, lam).

    w_nodes strictly decrease from 1; lam_nodes are uniformly spaced from 0
    to lam_max >= lam_reach, where lam_reach = c_bar / alpha (defaults to
    lam_max, i.e. no headroom).
    """

    w_nodes: np.ndarray
    lam_nodes: np.ndarray
    lam_reach: Optional[float] = None
    w_shift: float = 0.0

    def __post_init__(self):
        w = np.array(self.w_nodes, dtype=float)
        lam = np.array(self.lam_nodes, dtype=float)
        if w.ndim != 1 or w.size < 2 or w[0] != 1.0 or np.any(np.diff(w) >= 0) or w[-1] <= 0:
            raise ValueError("w_nodes must strictly decrease from 1 and stay positive")
        if lam.ndim != 1 or lam.size < 2 or lam[0] != 0.0 or np.any(np.diff(lam) <= 0):
            raise ValueError("lam_nodes must strictly increase from 0")
        h = np.diff(lam)
        if np.max(np.abs(h - h.mean())) > 1e-9 * lam[-1]:
            raise ValueError("lam_nodes must be uniformly spaced")
        if not self.w_shift >= 0.0:
            raise ValueError("w_shift must be nonnegative")
        object.__setattr__(self, "w_shift", float(self.w_shift))
        reach = float(lam[-1]) if self.lam_reach is None else float(self.lam_reach)
        if not (0.0 < reach <= lam[-1] * (1 + 1e-12)):
            raise ValueError("lam_reach must lie in (0, lam_max]")
        object.__setattr__(self, "lam_reach", min(reach, float(lam[-1])))
        w.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "w_nodes", w)
        object.__setattr__(self, "lam_nodes", lam)

    @property
    def W(self) -> int:
        return self.w_nodes.size

    @property
    def L(self) -> int:
        return self.lam_nodes.size

    @property
    def L_reach(self) -> int:
        """Number of lam nodes in [0, lam_reach]."""
        return int(np.count_nonzero(self.lam_nodes <= self.lam_reach * (1 + 1e-12)))

    @property
    def headroom(self) -> int:
        return self.L - self.L_reach

    @property
    def w_min(self) -> float:
        return float(self.w_nodes[-1])

    @property
    def lam_max(self) -> float:
        return float(self.lam_nodes[-1])

    @property
    def lam_step(self) -> float:
        return self.lam_max / (self.L - 1)

    @property
    def log_w(self) -> np.ndarray:
        """Interpolation coordinate log(w + w_shift) of the w nodes."""
        return np.log(self.w_nodes + self.w_shift)

    def w_coord(self, w):
        return np.log(np.clip(w, self.w_min, 1.0) + self.w_shift)

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """(W, L) arrays of node coordinates."""
        return np.meshgrid(self.w_nodes, self.lam_nodes, indexing="ij")

    def reachable(self) -> np.ndarray:
        """(W, L) mask of nodes reachable from (w=1, lam=0).

        Starting at the origin, lam never exceeds lam_reach * (1 - w); nodes
        beyond that line can be distorted by clamping and are excluded from
        cross-solver comparisons.
        """
        ww, ll = self.mesh()
        return ll <= self.lam_reach * (1.0 - ww) + 1e-9 * self.lam_reach

    def describe(self) -> dict:
        return {"W": self.W, "L": self.L, "w_min": self.w_min, "lam_max": self.lam_max, "lam_reach": self.lam_reach}

    def to_dict(self) -> dict:
        return {
            "w_nodes": [float(x) for x in self.w_nodes],
            "lam_nodes": [float(x) for x in self.lam_nodes],
            "lam_reach": self.lam_reach,
            "w_shift": self.w_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugGrid":
        return cls(
            np.array(d["w_nodes"], dtype=float),
            np.array(d["lam_nodes"], dtype=float),
            d.get("lam_reach"),
            float(d.get("w_shift", 0.0)),
        )


def default_headroom(w_nodes: np.ndarray, L: int) -> int:
    """Extra lam nodes above R: the widest w cell times R (how far a
    stencil corner can sit above the reachable line) plus four lam steps."""
    return int(math.ceil((L - 1) * float(np.max(-np.diff(w_nodes))))) + 4


def w_nodes(W: int, w_min: float, w_shift: float = 0.0) -> np.ndarray:
    """W nodes from 1 down to w_min, uniform in log(w + w_shift)."""
    x = np.linspace(math.log(1.0 + w_shift), math.log(w_min + w_shift), W)
    w = np.exp(x) - w_shift
    w[0], w[-1] = 1.0, w_min
    return w


def build_grid(
    model: SmdpModel,
    W: int = 64,
    L: int = 64,
    w_min: float = 1e-3,
    headroom: Optional[int] = None,
    w_shift: float = W_SHIFT,
) -> AugGrid:
    """W nodes from 1 to w_min, uniform in log(w + w_shift) (geometric for
    w_shift = 0); L uniform lam nodes on [0, R] followed by `headroom` more
    at the same spacing (None: default_headroom, 0: the axis ends at R)."""
    if W < 2 or L < 2:
        raise ValueError("grid needs W >= 2 and L >= 2")
    if not (0.0 < w_min < 1.0):
        raise ValueError("w_min must lie in (0, 1)")
    if not w_shift >= 0.0:
        raise ValueError("w_shift must be nonnegative")
    w = w_nodes(W, w_min, w_shift)
    extra = default_headroom(w, L) if headroom is None else int(headroom)
    if extra < 0:
        raise ValueError("headroom must be nonnegative")
    R = model.cost_horizon
    step = R / (L - 1)
    lam = np.linspace(0.0, R + extra * step, L + extra)
    lam[L - 1] = R
    return AugGrid(w_nodes=w, lam_nodes=lam, lam_reach=R, w_shift=w_shift)


@dataclass
class ValueTable:
    """Value samples indexed by (state, w-index, lam-index)."""

    grid: AugGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != (self.grid.W, self.grid.L):
            raise ValueError(f"values shape {self.values.shape} does not match grid {(self.grid.W, self.grid.L)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value table contains non-finite entries")

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    def origin(self) -> np.ndarray:
        """Values at (w=1, lam=0), i.e. J(i) for every initial state."""
        return self.values[:, 0, 0].copy()

    def to_csv(self, path, header: Optional[dict] = None, state_names=None) -> None:
        write_table_csv(path, self, header=header, state_names=state_names)


def lower_envelope(grid: AugGrid, utility: Utility, n_states: int) -> ValueTable:
    """U(lam) broadcast over states and w."""
    _, ll = grid.mesh()
    return ValueTable(grid, np.broadcast_to(utility(ll), (n_states, grid.W, grid.L)).copy())


def upper_envelope(grid: AugGrid, utility: Utility, n_states: int) -> ValueTable:
    """U(w * c_bar / alpha + lam)."""
    ww, ll = grid.mesh()
    return ValueTable(grid, np.broadcast_to(utility(ww * grid.lam_reach + ll), (n_states, grid.W, grid.L)).copy())


def bracket_violation(table: ValueTable, utility: Utility, atol: float = 0.0) -> float:
    """Largest amount by which a table leaves [U(lam), U(w R + lam)]."""
    lo = lower_envelope(table.grid, utility, 1).values[0]
    hi = upper_envelope(table.grid, utility, 1).values[0]
    v = table.values
    return float(max(np.max(lo - v), np.max(v - hi), 0.0) - atol)


def clamp_error(grid: AugGrid, utility: Utility) -> float:
    """Bound on the error from treating w < w_min specially:
    max over lam of U(w_min c_bar/alpha + lam) - U(lam)."""
    lam = grid.lam_nodes[grid.lam_nodes <= grid.lam_reach * (1 + 1e-12)]
    return float(np.max(utility(grid.w_min * grid.lam_reach + lam) - utility(lam)))


def _w_bracket(grid: AugGrid, w):
    """Lower node index and fractional weight in log(w + w_shift)."""
    x = grid.w_coord(w)
    logw = grid.log_w
    # log w nodes decrease; search on the negated (increasing) sequence.
    k0 = np.searchsorted(-logw, -x, side="right") - 1
    k0 = np.clip(k0, 0, grid.W - 2)
    t = (logw[k0] - x) / (logw[k0] - logw[k0 + 1])
    return k0, np.clip(t, 0.0, 1.0)


def _lam_bracket(grid: AugGrid, lam):
    y = np.clip(lam, 0.0, grid.lam_max) / grid.lam_step
    l0 = np.clip(np.floor(y).astype(np.intp), 0, grid.L - 2)
    r = np.clip(y - l0, 0.0, 1.0)
    return l0, r


def utility_weight(utility: Optional[Utility], lam, lam0, lam1, linear_r):
    """Weight on the upper node when interpolating linearly in U(lam).

    Values are near-affine in U(lam) (exactly so for exponential U), which
    removes most of the lam interpolation error; the weight stays in [0, 1],
    so the scheme remains monotone. Falls back to `linear_r` where U is
    flat to machine precision or is linear.
    """
    if utility is None or utility.kind == "linear":
        return linear_r
    with np.errstate(all="ignore"):
        u0 = utility(lam0)
        den = utility(lam1) - u0
        r = (utility(np.minimum(lam, lam1)) - u0) / den
    ok = np.isfinite(r) & (den > 0)
    return np.clip(np.where(ok, r, linear_r), 0.0, 1.0)


def interpolate(table: ValueTable, i, w, lam, tail=None, utility: Optional[Utility] = None):
    """Bilinear interpolation of table[i] at (w, lam) in (log(w + w_shift), lam).

    With `utility` the lam direction is interpolated in U(lam) instead.
    lam is clamped to the grid range. Below w_min the w_min slice is used,
    unless `tail` is given, in which case tail(i, w, lam) supplies the value
    there.
    """
    i = np.asarray(i)
    if np.any((i < 0) | (i >= table.n_states)):
        raise IndexError("state out of range")
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(w <= 0.0) or np.any(w > 1.0 + 1e-12):
        raise ValueError("w must lie in (0, 1]")
    if np.any(lam < 0.0) or np.any(lam > table.grid.lam_max + LAM_SLACK * max(1.0, table.grid.lam_max)):
        raise ValueError("lam outside the grid range")
    g = table.grid
    k0, t = _w_bracket(g, w)
    l0, r = _lam_bracket(g, lam)
    r = utility_weight(utility, np.clip(lam, 0.0, g.lam_max), g.lam_nodes[l0], g.lam_nodes[l0 + 1], r)
    v = table.values
    out = (1 - t) * ((1 - r) * v[i, k0, l0] + r * v[i, k0, l0 + 1]) + t * (
        (1 - r) * v[i, k0 + 1, l0] + r * v[i, k0 + 1, l0 + 1]
    )
    if tail is not None:
        below = w < g.w_min
        if np.any(below):
            out = np.where(below, tail(i, w, lam), out)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Midpoint-quantile atoms per (i, a, j): s_m = F^{-1}((m - 0.5)/M), weight 1/M."""

    M: int
    atoms: Dict[Tuple[int, int, int], Tuple[np.ndarray, np.ndarray]]

    def __getitem__(self, key):
        return self.atoms[key]


def build_quadrature(model: SmdpModel, M: int = 64) -> QuadratureRule:
    if M < 1:
        raise ValueError("quadrature needs M >= 1")
    levels = (np.arange(1, M + 1) - 0.5) / M
    weights = np.full(M, 1.0 / M)
    # last weight absorbs rounding so the weights sum to exactly one
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    weights.setflags(write=False)
    atoms = {}
    for i, a in model.pairs():
        for j in model.successors(i, a):
            s = np.asarray(model.sojourn[i][a][j].quantile(levels), dtype=float).reshape(M)
            s = np.maximum.accumulate(s)
            s.setflags(write=False)
            atoms[(i, a, j)] = (s, weights)
    return QuadratureRule(M=M, atoms=atoms)


def discount_factors(model: SmdpModel, quad: QuadratureRule) -> Dict[Tuple[int, int, int], float]:
    """Quadrature estimate of E[exp(-alpha s) | i, a, j]."""
    return {
        key: float(np.dot(wts, np.exp(-model.alpha * s))) for key, (s, wts) in quad.atoms.items()
    }


def tail_costs(model: SmdpModel, quad: QuadratureRule, tol: float = 1e-14, max_iter: int = 100000) -> np.ndarray:
    """Optimal risk-neutral expected discounted cost m_j from each state.

    For w below w_min the remaining cost is a w-fraction of a fresh run, so
    U(lam + w m_j) approximates the value to first order in w.
    """
    disc = discount_factors(model, quad)
    S = model.n_states
    m = np.zeros(S)
    for _ in range(max_iter):
        new = np.empty(S)
        for i in range(S):
            best = np.inf
            for a in range(model.n_actions(i)):
                c = float(model.cost[i][a]) / model.alpha
                P = model.transition[i][a]
                val = 0.0
                for j in model.successors(i, a):
                    d = disc[(i, a, j)]
                    val += P[j] * (c * (1.0 - d) + d * m[j])
                best = min(best, val)
            new[i] = best
        done = np.max(np.abs(new - m)) <= tol
        m = new
        if done:
            break
    return np.clip(m, 0.0, model.cost_horizon)


def write_table_csv(path, table: ValueTable, header: Optional[dict] = None, state_names=None) -> None:
    """CSV with columns state, w, lambda, value; header lines start with '#'."""
    g = table.grid
    with open(path, "w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        writer = csv.writer(fh)
        writer.writerow(["state", "w", "lambda", "value"])
        for i in range(table.n_states):
            name = state_names[i] if state_names is not None else i
            for k in range(g.W):
                for l in range(g.L):
                    writer.writerow([name, repr(float(g.w_nodes[k])), repr(float(g.lam_nodes[l])), repr(float(table.values[i, k, l]))])
