"""Monte Carlo trajectories of the controlled semi-Markov process.

Used as an oracle independent of the dynamic-programming solvers: next
state j ~ P(. | i, a), then sojourn s ~ F(. | i, a, j) by inverse CDF, and
the discounted cost accumulates in closed form,

    C_{n+1} = C_n + e^{-alpha T_n} * C(i, a)/alpha * (1 - e^{-alpha s}).

Trajectories are simulated in fixed-size chunks, each with its own random
stream spawned from the seed and the chunk index, so results do not depend
on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from smdp_risk.bellman import PolicyTable
from smdp_risk.model import Assumption1Certificate, SmdpModel, certify_assumption1
from smdp_risk.utility import Utility

CHUNK = 8192
Z95 = 1.959963984540054

PolicyLike = Union[PolicyTable, Sequence[PolicyTable]]


@dataclass
class TrajectorySample:
    times: np.ndarray  # T_0..T_N
    states: np.ndarray  # X_0..X_N
    actions: np.ndarray  # A_0..A_{N-1}
    costs: np.ndarray  # C_0..C_N


def _policy_at(policy: PolicyLike, n: int) -> PolicyTable:
    if isinstance(policy, PolicyTable):
        return policy
    return policy[n]


def _horizon_check(policy: PolicyLike, N: int) -> None:
    if not isinstance(policy, PolicyTable) and len(policy) < N:
        raise ValueError(f"Markov policy covers {len(policy)} jumps, horizon is {N}")


def _step(model: SmdpModel, state, T, C, act, u_next, u_soj):
    """Advance every trajectory by one jump; returns new (state, T, C)."""
    alpha = model.alpha
    new_state = np.empty_like(state)
    s = np.empty_like(T)
    for i, a in model.pairs():
        idx = np.nonzero((state == i) & (act == a))[0]
        if idx.size == 0:
            continue
        cum = np.cumsum(model.transition[i][a])
        j = np.minimum(np.searchsorted(cum, u_next[idx], side="right"), model.n_states - 1)
        # guard against rounding in cum[-1]: never land on a zero-probability state
        succ = model.successors(i, a)
        j = np.where(np.isin(j, succ), j, succ[-1])
        new_state[idx] = j
        for jj in succ:
            sel = idx[j == jj]
            if sel.size:
                s[sel] = model.sojourn[i][a][jj]._quantile(u_soj[sel])
    cost = np.empty_like(T)
    for i, a in model.pairs():
        cost[(state == i) & (act == a)] = float(model.cost[i][a])
    C = C + np.exp(-alpha * T) * (cost / alpha) * (-np.expm1(-alpha * s))
    return new_state, T + s, C


def _uniforms(rng: np.random.Generator, size):
    u = rng.random(size)
    return np.where(u > 0.0, u, np.finfo(float).tiny)


def sample_trajectory(model: SmdpModel, policy: PolicyLike, N: int, seed: int = 0, x0: int = 0) -> TrajectorySample:
    """One trajectory of N jumps from state x0 at (w=1, lam=0).

    `policy` is a stationary PolicyTable or a jump-ordered sequence; actions
    are read at the nearest grid node of (w, lam).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    _horizon_check(policy, N)
    rng = np.random.default_rng(seed)
    state = np.array([x0])
    T = np.zeros(1)
    C = np.zeros(1)
    times, states, actions, costs = [0.0], [x0], [], [0.0]
    for n in range(N):
        act = _policy_at(policy, n).lookup(state, np.exp(-model.alpha * T), C)
        u = _uniforms(rng, 2)
        state, T, C = _step(model, state, T, C, act, u[:1], u[1:])
        actions.append(int(act[0]))
        times.append(float(T[0]))
        states.append(int(state[0]))
        costs.append(float(C[0]))
    return TrajectorySample(np.array(times), np.array(states), np.array(actions), np.array(costs))


@dataclass
class PathBatch:
    """Terminal quantities of a batch of trajectories, in trajectory order."""

    C: np.ndarray
    T: np.ndarray
    discount: Optional[np.ndarray] = None  # (n_traj, N + 1) e^{-alpha T_n} if recorded
    depth: Optional[np.ndarray] = None  # jumps simulated per trajectory


def _run_chunk(model, policy, N, x0, size, seq, record, stop=None):
    """Simulate one chunk for N jumps, or fewer if stop(C, T) turns true."""
    rng = np.random.default_rng(seq)
    state = np.full(size, x0, dtype=np.intp)
    T = np.zeros(size)
    C = np.zeros(size)
    disc = np.empty((size, N + 1)) if record else None
    if record:
        disc[:, 0] = 1.0
    n = 0
    while n < N:
        act = _policy_at(policy, n).lookup(state, np.exp(-model.alpha * T), C)
        u = _uniforms(rng, (2, size))
        state, T, C = _step(model, state, T, C, act, u[0], u[1])
        n += 1
        if record:
            disc[:, n] = np.exp(-model.alpha * T)
        if stop is not None and stop(C, T):
            break
    return C, T, disc, np.full(size, n, dtype=np.intp)


def simulate_paths(
    model: SmdpModel,
    policy: PolicyLike,
    N: int,
    n_traj: int,
    seed: int = 0,
    x0: int = 0,
    record: bool = False,
    threads: Optional[int] = None,
    stop=None,
) -> PathBatch:
    """Run n_traj trajectories in CHUNK-sized blocks; `stop(C, T)` may end a
    block before N jumps."""
    _horizon_check(policy, N)
    threads = threads or int(os.environ.get("SMDP_RISK_THREADS", "1"))
    n_chunks = math.ceil(n_traj / CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK, n_traj - k * CHUNK) for k in range(n_chunks)]

    def work(k):
        return _run_chunk(model, policy, N, x0, sizes[k], seqs[k], record, stop)

    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    else:
        parts = [work(k) for k in range(n_chunks)]
    C = np.concatenate([p[0] for p in parts])
    T = np.concatenate([p[1] for p in parts])
    disc = np.concatenate([p[2] for p in parts]) if record else None
    return PathBatch(C, T, disc, np.concatenate([p[3] for p in parts]))


def truncation_depth(
    model: SmdpModel, utility: Utility, cert: Assumption1Certificate, tol: float, max_depth: int = 100000
) -> int:
    """Smallest N whose analytic tail envelope at the origin is below tol."""
    from smdp_risk.solver_infinite import error_bound

    rho = cert.rho(model.alpha)
    b0 = float(error_bound(utility, model, cert, 0, 1.0, 0.0))
    if b0 <= tol:
        return 1
    n = math.ceil(math.log(tol / b0) / math.log(rho))
    return int(min(max(n, 1), max_depth))


@dataclass
class ValueEstimate:
    mean: float
    se: float
    ci: tuple
    bracket: tuple
    interval: tuple  # CI of the lower end united with the bracket and CI of the upper end
    N: int
    n_traj: int
    samples: Optional[np.ndarray] = None
    upper_samples: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "se": self.se,
            "ci95": list(self.ci),
            "bracket": list(self.bracket),
            "interval": list(self.interval),
            "horizon": self.N,
            "n_traj": self.n_traj,
        }


def _mean_se(x: np.ndarray):
    n = x.size
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def estimate_value(
    model: SmdpModel,
    utility: Utility,
    policy: PolicyLike,
    N: Optional[int] = None,
    n_traj: int = 100000,
    seed: int = 0,
    x0: int = 0,
    tol: float = 1e-4,
    cert: Optional[Assumption1Certificate] = None,
    threads: Optional[int] = None,
    keep_samples: bool = False,
) -> ValueEstimate:
    """Estimate E[U(C_N)] (N given) or bracket E[U(C_inf)] (N=None).

    In the infinite mode every trajectory contributes
    U(C_n) <= U(C_inf) <= U(C_n + e^{-alpha T_n} c_bar/alpha) at its stopping
    depth n. A chunk stops once the mean width of these brackets is at most
    tol, or at the depth where the analytic envelope drops below tol.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    infinite = N is None
    stop = None
    if infinite:
        cert = cert or certify_assumption1(model)
        N = truncation_depth(model, utility, cert, tol)
        R = model.cost_horizon

        def stop(C, T):
            width = utility(C + np.exp(-model.alpha * T) * R) - utility(C)
            return float(np.mean(width)) <= tol

    batch = simulate_paths(model, policy, N, n_traj, seed=seed, x0=x0, threads=threads, stop=stop)
    lo = utility(batch.C)
    mean, se = _mean_se(lo)
    ci = (mean - Z95 * se, mean + Z95 * se)
    if infinite:
        hi = utility(batch.C + np.exp(-model.alpha * batch.T) * model.cost_horizon)
        mean_hi, se_hi = _mean_se(hi)
        bracket = (mean, mean_hi)
        interval = (mean - Z95 * se, mean_hi + Z95 * se_hi)
    else:
        hi = None
        bracket = (mean, mean)
        interval = ci
    return ValueEstimate(
        mean=mean,
        se=se,
        ci=ci,
        bracket=bracket,
        interval=interval,
        N=int(batch.depth.max()),
        n_traj=n_traj,
        samples=lo if keep_samples else None,
        upper_samples=hi if keep_samples else None,
    )


def discount_moments(
    model: SmdpModel, policy: PolicyLike, n_max: int, n_traj: int, seed: int = 0, x0: int = 0
):
    """Empirical mean and standard error of e^{-alpha T_n} for n = 0..n_max."""
    batch = simulate_paths(model, policy, n_max, n_traj, seed=seed, x0=x0, record=True)
    d = batch.discount
    mean = d.mean(axis=0)
    se = d.std(axis=0, ddof=1) / math.sqrt(n_traj)
    return mean, se
