"""Social-welfare MDPs solved by value iteration.

One MDP is solved for the full economy and one for each economy with a single
agent removed. A reduced economy lives on the reduced profile space (the
removed agent's axis is dropped), so its value table cannot depend on the
removed agent's type.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mechsim.model import Scenario

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10**6
TIE_EPS = 1e-12
# Iterates are accumulated in extended precision (80-bit on x86) so the
# residual trace resolves contraction well below one float64 ulp of W.
ACCUM = np.longdouble


class SolverError(RuntimeError):
    def __init__(self, mdp: str, iterations: int, residual: float):
        super().__init__(
            f"value iteration for {mdp} hit the iteration cap ({iterations}) "
            f"with residual {residual:.3e}"
        )
        self.mdp = mdp
        self.iterations = iterations
        self.residual = residual


def mdp_name(excluded: int | None) -> str:
    return "W" if excluded is None else f"W_minus_{excluded}"


def expect_next(
    s: Scenario,
    table: np.ndarray,
    members: Sequence[int],
    mask: int,
    kernels: Sequence[np.ndarray] | None = None,
) -> np.ndarray:
    """E[table(theta') | mask, theta] for every profile theta over ``members``.

    Applies each member's one-step kernel along its own axis, so the joint
    kernel is never built. Axes are contracted in agent-index order.
    ``kernels`` overrides the scenario's kernels (same shapes).
    """
    kernels = s.kernels if kernels is None else kernels
    out = table
    for axis, j in enumerate(members):
        out = np.moveaxis(np.tensordot(kernels[j][mask], out, axes=([1], [axis])), 0, axis)
    return out


def accum_kernels(s: Scenario) -> tuple[np.ndarray, ...]:
    """Kernels in the accumulation precision with rows renormalized there.

    Rows that sum to one only within float64 rounding would make the Bellman
    operator a contraction by slightly more than delta; renormalizing moves
    each probability by at most the validator's row-sum tolerance.
    """
    out = []
    for k in s.kernels:
        k = k.astype(ACCUM)
        sums = k.sum(axis=-1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("kernel has a row with no probability mass")
        out.append(k / sums)
    return tuple(out)


def stage_welfare(s: Scenario, members: Sequence[int], mask: int) -> np.ndarray:
    """Sum of members' expected values under ``mask`` on the members' profile space."""
    dims = s.shape
    dropped = [j for j in range(s.n_agents) if j not in members]
    total = np.zeros(tuple(dims[j] for j in members))
    for i in members:
        v = s.values[i, mask].reshape(dims)
        # Non-members are outside ``mask``, so any fixed type for them gives the same value.
        for j in reversed(dropped):
            v = np.take(v, 0, axis=j)
        total = total + v
    return total


@dataclass(frozen=True, eq=False)
class MDPSolution:
    """Value table, greedy policy and convergence record of one welfare MDP.

    ``residuals`` holds the successive sup-norm changes in the accumulation
    precision; ``values`` and ``q`` are float64.
    """

    excluded: int | None
    members: tuple[int, ...]
    masks: tuple[int, ...]
    values: np.ndarray
    q: np.ndarray
    policy: np.ndarray
    iterations: int
    residuals: tuple[np.longdouble, ...]
    bellman_residual: float
    tol: float

    @property
    def name(self) -> str:
        return mdp_name(self.excluded)


def _greedy(q: np.ndarray, masks: Sequence[int]) -> np.ndarray:
    best = q.max(axis=0)
    scale = np.maximum(1.0, np.abs(best))
    # First (smallest-mask) action within TIE_EPS of the max.
    near = q >= best - TIE_EPS * scale
    idx = np.argmax(near, axis=0)
    return np.asarray(masks)[idx]


def solve_welfare(
    s: Scenario,
    excluded: int | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> MDPSolution:
    """Value iteration from zero until the sup-norm change drops below
    ``tol * (1 - delta) / (2 * delta)``, which bounds the error by ``tol``.

    With ``delta == 0`` a single backup gives the myopic optimum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    delta = s.discount
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"discount {delta} must lie in [0, 1)")
    members = tuple(j for j in range(s.n_agents) if j != excluded)
    masks = tuple(m for m in s.allocations if excluded is None or not (m >> excluded) & 1)
    if not masks:
        raise ValueError(f"{mdp_name(excluded)}: no feasible allocation")
    rewards = np.stack([stage_welfare(s, members, m) for m in masks]).astype(ACCUM)
    kernels = accum_kernels(s)

    def backup(w):
        return np.stack([
            rewards[k] + delta * expect_next(s, w, members, m, kernels)
            for k, m in enumerate(masks)
        ])

    w = np.zeros(rewards.shape[1:], dtype=ACCUM)
    residuals: list[np.longdouble] = []
    if delta == 0.0:
        w = rewards.max(axis=0)
        iterations = 1
    else:
        threshold = tol * (1.0 - delta) / (2.0 * delta)
        iterations = 0
        while True:
            w_new = backup(w).max(axis=0)
            iterations += 1
            change = np.max(np.abs(w_new - w)) if w.size else ACCUM(0)
            residuals.append(change)
            w = w_new
            if change <= threshold:
                break
            if iterations >= max_iter:
                raise SolverError(mdp_name(excluded), iterations, float(change))
    w = w.astype(float)
    q_ext = backup(w.astype(ACCUM))
    bellman = float(np.max(np.abs(q_ext.max(axis=0) - w))) if w.size else 0.0
    q = q_ext.astype(float)
    w.setflags(write=False)
    q.setflags(write=False)
    policy = _greedy(q, masks)
    policy.setflags(write=False)
    log.debug("%s: %d iterations, bellman residual %.3e", mdp_name(excluded), iterations, bellman)
    return MDPSolution(
        excluded=excluded,
        members=members,
        masks=masks,
        values=w,
        q=q,
        policy=policy,
        iterations=iterations,
        residuals=tuple(residuals),
        bellman_residual=bellman,
        tol=tol,
    )


@dataclass(frozen=True, eq=False)
class WelfareSolution:
    """Full-economy solution plus one reduced solution per removed agent."""

    scenario: Scenario
    full: MDPSolution
    reduced: tuple[MDPSolution, ...]
    _cont_cache: dict = field(default_factory=dict, repr=False)

    @property
    def tol(self) -> float:
        return self.full.tol

    @property
    def n_solves(self) -> int:
        return 1 + len(self.reduced)

    def W(self, profile: Sequence[int]) -> float:
        return float(self.full.values[tuple(profile)])

    def reduce(self, i: int, profile: Sequence[int]) -> tuple[int, ...]:
        return tuple(k for j, k in enumerate(profile) if j != i)

    def W_minus(self, i: int, profile: Sequence[int]) -> float:
        """W_{-i} at a full profile; agent ``i``'s component is ignored."""
        return float(self.reduced[i].values[self.reduce(i, profile)])

    def W_minus_full(self, i: int) -> np.ndarray:
        """W_{-i} broadcast onto the full profile grid (constant along axis ``i``)."""
        return np.broadcast_to(
            np.expand_dims(self.reduced[i].values, i), self.scenario.shape
        )

    def allocation(self, profile: Sequence[int]) -> int:
        return int(self.full.policy[tuple(profile)])

    def q_values(self, profile: Sequence[int]) -> dict[int, float]:
        """Bellman backup of every feasible allocation at ``profile``."""
        idx = tuple(profile)
        return {m: float(self.full.q[(k,) + idx]) for k, m in enumerate(self.full.masks)}

    def expected_W(self, mask: int) -> np.ndarray:
        """E[W(theta') | mask, theta] over the full profile grid."""
        key = (None, mask)
        if key not in self._cont_cache:
            s = self.scenario
            self._cont_cache[key] = expect_next(s, self.full.values, self.full.members, mask)
        return self._cont_cache[key]

    def expected_W_minus(self, i: int, mask: int) -> np.ndarray:
        """E[W_{-i}(theta'_{-i}) | mask, theta_{-i}] over the reduced grid."""
        key = (i, mask)
        if key not in self._cont_cache:
            red = self.reduced[i]
            self._cont_cache[key] = expect_next(self.scenario, red.values, red.members, mask)
        return self._cont_cache[key]


def _threads() -> int:
    try:
        n = int(os.environ.get("MECHSIM_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def solve_all(
    s: Scenario, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> WelfareSolution:
    """Solve the full MDP and every single-agent-removed MDP (n + 2 solves for agents 0..n)."""
    jobs = [None] + list(range(s.n_agents))
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(lambda e: solve_welfare(s, e, tol, max_iter), jobs))
    else:
        sols = [solve_welfare(s, e, tol, max_iter) for e in jobs]
    return WelfareSolution(scenario=s, full=sols[0], reduced=tuple(sols[1:]))


def efficient_allocation(sol: WelfareSolution, profile: Sequence[int]) -> int:
    """Greedy allocation of the full economy; ties go to the smallest bitmask."""
    return sol.allocation(profile)
