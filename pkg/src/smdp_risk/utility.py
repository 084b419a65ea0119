"""Utility functions of the accumulated discounted cost.

Only a closed set of kinds is supported, because the infinite-horizon error
bounds need the shape class and exact one-sided derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("exponential", "power", "log1p", "linear")


def _check_lam(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0.0):
        raise ValueError("utility is defined on [0, inf); got a negative cost")
    return lam


@dataclass(frozen=True)
class Utility:
    """U(lam) for lam >= 0.

    Kinds:
        exponential: (1/gamma) * exp(gamma * lam), gamma != 0.
        power: lam**p for p > 1; for 0 < p < 1 the shifted form
            (lam + eta)**p - eta**p so that U'(0) is finite.
        log1p: log(1 + lam).
        linear: lam.
    """

    kind: str
    gamma: float = 1.0
    p: float = 2.0
    eta: float = 1e-3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "exponential" and self.gamma == 0:
            raise ValueError("exponential utility needs gamma != 0")
        if self.kind == "power":
            if not (self.p > 0 and self.p != 1):
                raise ValueError("power utility needs p > 0 and p != 1")
            if self.p < 1 and not self.eta > 0:
                raise ValueError("concave power utility needs eta > 0")

    @classmethod
    def exponential(cls, gamma: float) -> "Utility":
        return cls("exponential", gamma=float(gamma))

    @classmethod
    def power(cls, p: float, eta: float = 1e-3) -> "Utility":
        return cls("power", p=float(p), eta=float(eta))

    @classmethod
    def log1p(cls) -> "Utility":
        return cls("log1p")

    @classmethod
    def linear(cls) -> "Utility":
        return cls("linear")

    @property
    def shape(self) -> str:
        """'concave', 'convex' or 'linear' (linear is both)."""
        if self.kind == "linear":
            return "linear"
        if self.kind == "log1p":
            return "concave"
        if self.kind == "exponential":
            return "convex" if self.gamma > 0 else "concave"
        return "convex" if self.p > 1 else "concave"

    @property
    def is_concave(self) -> bool:
        return self.shape in ("concave", "linear")

    @property
    def is_convex(self) -> bool:
        return self.shape in ("convex", "linear")

    def __call__(self, lam):
        return self.eval(lam)

    def eval(self, lam):
        lam = _check_lam(lam)
        return self._eval(lam)

    def _eval(self, lam):
        if self.kind == "exponential":
            return np.exp(self.gamma * lam) / self.gamma
        if self.kind == "power":
            if self.p > 1:
                return lam**self.p
            return (lam + self.eta) ** self.p - self.eta**self.p
        if self.kind == "log1p":
            return np.log1p(lam)
        return lam * 1.0

    def _deriv(self, lam):
        if self.kind == "exponential":
            return np.exp(self.gamma * lam)
        if self.kind == "power":
            if self.p > 1:
                return self.p * lam ** (self.p - 1)
            return self.p * (lam + self.eta) ** (self.p - 1)
        if self.kind == "log1p":
            return 1.0 / (1.0 + lam)
        return np.ones_like(lam)

    def deriv_left(self, lam):
        # All supported kinds are C^1 on [0, inf); at 0 the left derivative
        # is taken to be the right one.
        return self._deriv(_check_lam(lam))

    def deriv_right(self, lam):
        return self._deriv(_check_lam(lam))

    def inverse(self, u):
        """U^{-1}, used for certainty-equivalent reporting."""
        u = np.asarray(u, dtype=float)
        if self.kind == "exponential":
            return np.log(self.gamma * u) / self.gamma
        if self.kind == "power":
            if self.p > 1:
                return u ** (1.0 / self.p)
            return (u + self.eta**self.p) ** (1.0 / self.p) - self.eta
        if self.kind == "log1p":
            return np.expm1(u)
        return u

    def to_dict(self) -> dict:
        if self.kind == "exponential":
            return {"kind": "exponential", "gamma": self.gamma}
        if self.kind == "power":
            d = {"kind": "power", "p": self.p}
            if self.p < 1:
                d["eta"] = self.eta
            return d
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "Utility":
        kind = d.get("kind")
        if kind == "exponential":
            return cls.exponential(d["gamma"])
        if kind == "power":
            return cls.power(d["p"], d.get("eta", 1e-3))
        if kind in ("log1p", "linear"):
            return cls(kind)
        raise ValueError(f"unknown utility kind {kind!r}")

