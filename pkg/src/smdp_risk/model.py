"""SMDP instances: sojourn-time laws, the semi-Markov kernel and its checks.

The joint kernel Q(ds, j | i, a) is stored factored as P(j | i, a) times a
sojourn law F(ds | i, a, j), one law per admissible destination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

STOCHASTIC_ATOL = 1e-12


class NoCertificate(ValueError):
    """Raised when no Assumption-1 epsilon > 0 exists for the requested delta."""


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("quantile level must lie in the open interval (0, 1)")
    return p


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise ValueError("sojourn time must be nonnegative")
    return s


class _Sojourn:
    """Shared behaviour for the closed family of sojourn-time laws."""

    continuous = True

    def cdf(self, s):
        s = _check_s(s)
        return self._cdf(s)

    def quantile(self, p):
        p = _check_p(p)
        return self._quantile(p)

    def sample(self, rng: np.random.Generator, size=None):
        # Inverse-CDF draw; avoid the closed endpoint 0 of rng.random().
        u = rng.random(size)
        u = np.where(u > 0.0, u, np.finfo(float).tiny)
        return self._quantile(u)

    def mean_discount(self, alpha: float) -> float:
        """E[exp(-alpha * s)], by quadrature when no closed form is coded."""
        from scipy import integrate

        val, _ = integrate.quad(lambda u: math.exp(-alpha * float(self._quantile(np.asarray(u)))), 0.0, 1.0, limit=200)
        return val


@dataclass(frozen=True)
class Exponential(_Sojourn):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def _cdf(self, s):
        return -np.expm1(-self.rate * s)

    def _quantile(self, p):
        return -np.log1p(-p) / self.rate

    def mean_discount(self, alpha):
        return self.rate / (self.rate + alpha)

    def to_dict(self):
        return {"kind": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Uniform(_Sojourn):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi):
            raise ValueError("uniform law needs 0 <= lo < hi")

    def _cdf(self, s):
        return np.clip((s - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def _quantile(self, p):
        return self.lo + p * (self.hi - self.lo)

    def mean_discount(self, alpha):
        a, b = self.lo, self.hi
        return (math.exp(-alpha * a) - math.exp(-alpha * b)) / (alpha * (b - a))

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Weibull(_Sojourn):
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("weibull shape and scale must be positive")

    def _cdf(self, s):
        return -np.expm1(-((s / self.scale) ** self.shape))

    def _quantile(self, p):
        return self.scale * (-np.log1p(-p)) ** (1.0 / self.shape)

    def to_dict(self):
        return {"kind": "weibull", "shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Deterministic(_Sojourn):
    s0: float
    continuous = False

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("deterministic sojourn must be positive")

    def _cdf(self, s):
        return np.where(s >= self.s0, 1.0, 0.0)

    def _quantile(self, p):
        return np.full(np.shape(p), self.s0) if np.ndim(p) else np.float64(self.s0)

    def mean_discount(self, alpha):
        return math.exp(-alpha * self.s0)

    def to_dict(self):
        return {"kind": "deterministic", "s0": self.s0}


@dataclass(frozen=True)
class Mixture(_Sojourn):
    """Finite mixture; the quantile is found by bisection between the
    smallest and largest component quantiles, which always bracket it."""

    components: Tuple[_Sojourn, ...]
    weights: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.components) == 0 or len(self.components) != len(self.weights):
            raise ValueError("mixture needs matching nonempty components and weights")
        if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")

    @property
    def continuous(self):
        return all(c.continuous for c in self.components)

    def _cdf(self, s):
        return sum(w * c._cdf(s) for c, w in zip(self.components, self.weights))

    def _quantile(self, p):
        p = np.asarray(p, dtype=float)
        qs = np.stack([np.broadcast_to(c._quantile(p), p.shape) for c in self.components])
        lo = qs.min(axis=0)
        hi = qs.max(axis=0)
        done = self._cdf(lo) >= p
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if not np.any((mid > lo) & (mid < hi)):
                break
            up = self._cdf(mid) >= p
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return np.where(done, lo, hi)

    def mean_discount(self, alpha):
        return sum(w * c.mean_discount(alpha) for c, w in zip(self.components, self.weights))

    def to_dict(self):
        return {
            "kind": "mixture",
            "components": [c.to_dict() for c in self.components],
            "weights": list(self.weights),
        }


SojournDist = Union[Exponential, Uniform, Weibull, Deterministic, Mixture]


def cdf(dist: SojournDist, s):
    return dist.cdf(s)


def quantile(dist: SojournDist, p):
    return dist.quantile(p)


def sojourn_from_dict(d: dict) -> SojournDist:
    kind = d.get("kind")
    params = {k: v for k, v in d.items() if k != "kind"}
    if kind == "exponential":
        return Exponential(**params)
    if kind == "uniform":
        return Uniform(**params)
    if kind == "weibull":
        return Weibull(**params)
    if kind == "deterministic":
        return Deterministic(**params)
    if kind == "mixture":
        return Mixture(
            components=tuple(sojourn_from_dict(c) for c in params["components"]),
            weights=tuple(params["weights"]),
        )
    raise ValueError(f"unknown sojourn kind {kind!r}")


@dataclass(frozen=True)
class SmdpModel:
    """A finite SMDP.

    Attributes:
        states: state names, size S.
        actions: per-state action names.
        transition: per-state arrays of shape (A(i), S) holding P(j | i, a).
        sojourn: sojourn[i][a][j] is the law of the holding time before a
            jump i -> j under a; may be None where P(j | i, a) == 0.
        cost: per-state arrays of shape (A(i),) holding cost rates.
        c_bar: upper bound on cost rates.
        alpha: discount rate.
    """

    states: Tuple[str, ...]
    actions: Tuple[Tuple[str, ...], ...]
    transition: Tuple[np.ndarray, ...]
    sojourn: Tuple[Tuple[Tuple[Optional[SojournDist], ...], ...], ...]
    cost: Tuple[np.ndarray, ...]
    c_bar: float
    alpha: float
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(tuple(a) for a in self.actions))
        frozen = []
        for arr in self.transition:
            arr = np.array(arr, dtype=float)
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "transition", tuple(frozen))
        frozen = []
        for arr in self.cost:
            arr = np.array(arr, dtype=float).reshape(-1)
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "cost", tuple(frozen))
        object.__setattr__(
            self, "sojourn", tuple(tuple(tuple(row) for row in per_i) for per_i in self.sojourn)
        )

    @property
    def n_states(self) -> int:
        return len(self.states)

    def n_actions(self, i: int) -> int:
        return len(self.actions[i])

    @property
    def max_actions(self) -> int:
        return max(len(a) for a in self.actions)

    @property
    def cost_horizon(self) -> float:
        """c_bar / alpha, the largest discounted cost reachable from zero."""
        return self.c_bar / self.alpha

    def pairs(self):
        """Admissible (i, a) index pairs in fixed order."""
        for i in range(self.n_states):
            for a in range(self.n_actions(i)):
                yield i, a

    def successors(self, i: int, a: int):
        """Destinations j with P(j | i, a) > 0, ascending."""
        row = self.transition[i][a]
        return [j for j in range(self.n_states) if row[j] > 0.0]

    def label(self, i: int, a: Optional[int] = None) -> str:
        if a is None:
            return str(self.states[i])
        return f"({self.states[i]},{self.actions[i][a]})"


def validate(model: SmdpModel) -> List[str]:
    """Return every violated model invariant; an empty list means valid."""
    issues: List[str] = []
    S = model.n_states
    if S < 1:
        issues.append("model has no states")
    if not (0.0 < model.c_bar < math.inf):
        issues.append("c_bar must be positive and finite")
    if not (model.alpha > 0.0 and math.isfinite(model.alpha)):
        issues.append("alpha must be positive and finite")
    if len(model.actions) != S or len(model.transition) != S or len(model.cost) != S or len(model.sojourn) != S:
        issues.append("per-state sections do not match the number of states")
        return issues
    for i in range(S):
        A = len(model.actions[i])
        if A < 1:
            issues.append(f"no actions at {model.label(i)}")
            continue
        P = model.transition[i]
        if P.shape != (A, S):
            issues.append(f"transition shape {P.shape} at {model.label(i)}, expected {(A, S)}")
            continue
        if model.cost[i].shape != (A,):
            issues.append(f"cost shape {model.cost[i].shape} at {model.label(i)}, expected {(A,)}")
            continue
        for a in range(A):
            where = model.label(i, a)
            row = P[a]
            if np.any(~np.isfinite(row)) or np.any(row < 0.0):
                issues.append(f"negative or non-finite probability at {where}")
            if abs(float(row.sum()) - 1.0) > STOCHASTIC_ATOL:
                issues.append(f"row not stochastic at {where} (sums to {row.sum():.15g})")
            c = float(model.cost[i][a])
            if c < 0.0:
                issues.append(f"negative cost at {where}")
            elif c > model.c_bar:
                issues.append(f"cost exceeds c_bar at {where}")
            laws = model.sojourn[i][a] if a < len(model.sojourn[i]) else ()
            if len(laws) != S:
                issues.append(f"sojourn laws at {where} do not cover all {S} destinations")
                continue
            for j in range(S):
                if row[j] <= 0.0:
                    continue
                law = laws[j]
                if law is None:
                    issues.append(f"missing sojourn law at {where}->{model.states[j]}")
                elif float(law.cdf(0.0)) != 0.0:
                    issues.append(f"sojourn law has mass at 0 at {where}->{model.states[j]}")
    return issues


@dataclass(frozen=True)
class Assumption1Certificate:
    """Constants (delta, epsilon): every sojourn exceeds delta w.p. >= epsilon."""

    delta: float
    epsilon: float

    def rho(self, alpha: float) -> float:
        """Per-jump bound on E[exp(-alpha * sojourn)]."""
        return 1.0 - self.epsilon + self.epsilon * math.exp(-alpha * self.delta)


def default_delta(model: SmdpModel) -> float:
    """Half the smallest 10th-percentile sojourn over admissible (i, a, j)."""
    p10 = min(
        float(model.sojourn[i][a][j].quantile(0.1))
        for i, a in model.pairs()
        for j in model.successors(i, a)
    )
    return 0.5 * p10


def certify_assumption1(model: SmdpModel, delta: Optional[float] = None) -> Assumption1Certificate:
    if delta is None:
        delta = default_delta(model)
    if not delta > 0:
        raise ValueError("delta must be positive")
    worst = 0.0
    for i, a in model.pairs():
        row = model.transition[i][a]
        mass = sum(row[j] * float(model.sojourn[i][a][j].cdf(delta)) for j in model.successors(i, a))
        worst = max(worst, mass)
    eps = 1.0 - worst
    if eps <= 0.0:
        raise NoCertificate(f"delta={delta:g} leaves no mass above it (epsilon={eps:g})")
    return Assumption1Certificate(delta=float(delta), epsilon=float(min(eps, 1.0)))


def build_model(
    states: Sequence[str],
    actions: Sequence[Sequence[str]],
    transition: Sequence,
    sojourn: Sequence,
    cost: Sequence,
    c_bar: float,
    alpha: float,
    name: str = "model",
) -> SmdpModel:
    """Convenience constructor; `sojourn[i][a]` may be a single law shared by
    every destination or a per-destination list."""
    laws = []
    S = len(states)
    for i, per_i in enumerate(sojourn):
        row_i = []
        for a, entry in enumerate(per_i):
            if isinstance(entry, _Sojourn):
                probs = np.asarray(transition[i][a], dtype=float)
                row_i.append(tuple(entry if probs[j] > 0 else None for j in range(S)))
            else:
                row_i.append(tuple(entry))
        laws.append(tuple(row_i))
    return SmdpModel(
        states=tuple(states),
        actions=tuple(tuple(a) for a in actions),
        transition=tuple(np.asarray(t, dtype=float) for t in transition),
        sojourn=tuple(laws),
        cost=tuple(np.asarray(c, dtype=float) for c in cost),
        c_bar=float(c_bar),
        alpha=float(alpha),
        name=name,
    )
