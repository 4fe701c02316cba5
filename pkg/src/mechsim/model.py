"""Finite-discrete problem instances: agents, types, allocations, values, kernels.

Allocations are bitmasks over agent indices (bit ``i`` set iff agent ``i`` is
selected). Type profiles are tuples of per-agent type indices and are enumerated
lexicographically with agent 0 varying slowest.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PROB_TOL = 1e-12

BUYER = "buyer"
SELLER = "seller"


def members_of(mask: int, n_agents: int) -> tuple[int, ...]:
    return tuple(i for i in range(n_agents) if (mask >> i) & 1)


def mask_of(agents: Sequence[int]) -> int:
    mask = 0
    for i in agents:
        mask |= 1 << i
    return mask


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ValueParams:
    """Constants of the buyer/seller parametric value family."""

    k1: float
    k2: float
    k3: float


@dataclass(frozen=True, eq=False)
class WorldModel:
    """Finite world states with known weights.

    Realized values take the additive form ``V_i = (v_i + eps[w, i]) * 1{i in a}``
    unless an explicit ``table`` of shape (omegas, agents, masks, profiles) is given.
    """

    weights: np.ndarray
    eps: np.ndarray | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.eps is not None:
            object.__setattr__(self, "eps", _frozen(self.eps))
        if self.table is not None:
            object.__setattr__(self, "table", _frozen(self.table))

    @classmethod
    def degenerate(cls) -> "WorldModel":
        return cls(weights=[1.0])

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def is_degenerate(self) -> bool:
        return self.size == 1 and self.table is None and (
            self.eps is None or not np.any(self.eps)
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    """A complete problem instance.

    ``values[i, mask, profile]`` holds expected values; ``kernels[i][mask, k, k2]``
    is the probability that agent ``i`` moves from type ``k`` to ``k2`` under
    allocation ``mask``.
    """

    type_labels: tuple[tuple[float, ...], ...]
    roles: tuple[str, ...]
    values: np.ndarray
    kernels: tuple[np.ndarray, ...]
    discount: float
    world: WorldModel = field(default_factory=WorldModel.degenerate)
    type_names: tuple[tuple[str, ...], ...] | None = None
    feasible: tuple[int, ...] | None = None
    const_payment: float | None = None
    value_params: ValueParams | None = None
    name: str = ""

    def __post_init__(self):
        labels = tuple(tuple(float(x) for x in t) for t in self.type_labels)
        object.__setattr__(self, "type_labels", labels)
        n = len(labels)
        if n == 0:
            raise ValueError("scenario needs at least one agent")
        if len(self.roles) != n:
            raise ValueError(f"expected {n} roles, got {len(self.roles)}")
        object.__setattr__(self, "roles", tuple(self.roles))
        if self.type_names is None:
            names = tuple(tuple(str(k) for k in range(len(t))) for t in labels)
        else:
            names = tuple(tuple(str(x) for x in t) for t in self.type_names)
            if [len(t) for t in names] != [len(t) for t in labels]:
                raise ValueError("type_names must match type_labels in shape")
        object.__setattr__(self, "type_names", names)

        values = _frozen(self.values)
        want = (n, 1 << n, self.n_profiles)
        if values.shape != want:
            raise ValueError(f"values has shape {values.shape}, expected {want}")
        object.__setattr__(self, "values", values)

        if len(self.kernels) != n:
            raise ValueError(f"expected {n} kernels, got {len(self.kernels)}")
        kernels = []
        for i, k in enumerate(self.kernels):
            k = _frozen(k)
            t = len(labels[i])
            if k.shape != (1 << n, t, t):
                raise ValueError(
                    f"kernel of agent {i} has shape {k.shape}, expected {(1 << n, t, t)}"
                )
            kernels.append(k)
        object.__setattr__(self, "kernels", tuple(kernels))

        if self.world.eps is not None and self.world.eps.shape != (self.world.size, n):
            raise ValueError("world eps must have shape (omegas, agents)")
        if self.world.table is not None and self.world.table.shape != (
            self.world.size,
        ) + want:
            raise ValueError("world table must have shape (omegas, agents, masks, profiles)")
        object.__setattr__(self, "discount", float(self.discount))
        if self.feasible is not None:
            object.__setattr__(self, "feasible", tuple(sorted(set(self.feasible))))

    # -- shape helpers -----------------------------------------------------

    @property
    def n_agents(self) -> int:
        return len(self.type_labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.type_labels)

    @property
    def n_profiles(self) -> int:
        return int(np.prod(self.shape))

    @property
    def allocations(self) -> tuple[int, ...]:
        """Feasible allocation masks in ascending order."""
        if self.feasible is not None:
            return self.feasible
        return tuple(range(1 << self.n_agents))

    @property
    def buyers(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r == BUYER)

    @property
    def sellers(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r == SELLER)

    def profile_index(self, profile: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(profile), self.shape))

    def profile_at(self, index: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.unravel_index(index, self.shape))

    def profile_label(self, profile: Sequence[int]) -> str:
        return "|".join(self.type_names[i][k] for i, k in enumerate(profile))

    def realized_value(self, i: int, mask: int, profile: Sequence[int], omega: int) -> float:
        p = self.profile_index(profile)
        w = self.world
        if w.table is not None:
            return float(w.table[omega, i, mask, p])
        if not (mask >> i) & 1:
            return 0.0
        v = float(self.values[i, mask, p])
        if w.eps is not None:
            v += float(w.eps[omega, i])
        return v

    def realized_values(self, mask: int, profile: Sequence[int], omega: int) -> np.ndarray:
        return np.array(
            [self.realized_value(i, mask, profile, omega) for i in range(self.n_agents)]
        )


def enumerate_profiles(s: Scenario) -> list[tuple[int, ...]]:
    """All type profiles, agent 0 varying slowest."""
    return list(itertools.product(*(range(t) for t in s.shape)))


def expected_value(s: Scenario, i: int, mask: int, profile: Sequence[int]) -> float:
    """Value of agent ``i`` under allocation ``mask`` averaged over world states."""
    if s.world.table is None and s.world.is_degenerate:
        return float(s.values[i, mask, s.profile_index(profile)])
    total = 0.0
    for w, weight in enumerate(s.world.weights):
        total += float(weight) * s.realized_value(i, mask, profile, w)
    return total


# -- value families ----------------------------------------------------------


def parametric_values(
    type_labels: Sequence[Sequence[float]], roles: Sequence[str], params: ValueParams
) -> np.ndarray:
    """Expected-value table for the buyer/seller family.

    A buyer in the allocation earns ``k1 / theta_b * sum(theta_j for selected
    sellers) - k2``; a selected seller pays ``k3 * theta_j**2``.
    """
    n = len(type_labels)
    shape = tuple(len(t) for t in type_labels)
    profiles = list(itertools.product(*(range(t) for t in shape)))
    values = np.zeros((n, 1 << n, len(profiles)))
    for mask in range(1 << n):
        for p, prof in enumerate(profiles):
            theta = [type_labels[j][prof[j]] for j in range(n)]
            for i in range(n):
                if not (mask >> i) & 1:
                    continue
                if roles[i] == BUYER:
                    supply = sum(
                        theta[j] for j in range(n) if roles[j] == SELLER and (mask >> j) & 1
                    )
                    values[i, mask, p] = params.k1 / theta[i] * supply - params.k2
                else:
                    values[i, mask, p] = -params.k3 * theta[i] ** 2
    return values


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    agent: int | None = None
    mask: int | None = None
    type_index: int | None = None
    profile: tuple[int, ...] | None = None

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


def _locality_groups(s: Scenario, mask: int) -> Iterator[list[int]]:
    """Groups of profile indices that agree on every component in ``mask``."""
    members = members_of(mask, s.n_agents)
    groups: dict[tuple[int, ...], list[int]] = {}
    for p, prof in enumerate(enumerate_profiles(s)):
        groups.setdefault(tuple(prof[j] for j in members), []).append(p)
    return iter(groups.values())


def validate_scenario(s: Scenario) -> list[Violation]:
    """Every violated modelling assumption; an empty list means the scenario is valid."""
    out: list[Violation] = []
    n = s.n_agents

    if not 0.0 < s.discount < 1.0:
        out.append(Violation("discount", f"discount {s.discount} not in (0, 1)"))
    for i, r in enumerate(s.roles):
        if r not in (BUYER, SELLER):
            out.append(Violation("role", f"agent {i} has unknown role {r!r}", agent=i))
    for m in s.allocations:
        if not 0 <= m < (1 << n):
            out.append(Violation("allocation", f"feasible mask {m} out of range", mask=m))
    if s.const_payment is not None and not s.const_payment > 0:
        out.append(Violation("const_payment", f"CONST payment {s.const_payment} not positive"))
    if s.value_params is not None:
        for name in ("k1", "k2", "k3"):
            if not getattr(s.value_params, name) > 0:
                out.append(Violation("value_params", f"{name} must be positive"))

    for i, kern in enumerate(s.kernels):
        for m in range(1 << n):
            for k in range(kern.shape[1]):
                row = kern[m, k]
                if np.any(row < 0) or np.any(row > 1) or not np.all(np.isfinite(row)):
                    out.append(Violation(
                        "kernel",
                        f"agent {i} allocation {m} type {k}: entries outside [0, 1]",
                        agent=i, mask=m, type_index=k,
                    ))
                total = float(np.sum(row))
                if abs(total - 1.0) > PROB_TOL:
                    out.append(Violation(
                        "kernel",
                        f"agent {i} allocation {m} type {k}: row sums to {total!r}",
                        agent=i, mask=m, type_index=k,
                    ))

    w = s.world
    if np.any(w.weights < 0) or abs(float(np.sum(w.weights)) - 1.0) > PROB_TOL:
        out.append(Violation("world", f"world weights sum to {float(np.sum(w.weights))!r}"))
    if w.eps is not None:
        drift = w.weights @ w.eps
        for i in range(n):
            if abs(drift[i]) > PROB_TOL:
                out.append(Violation(
                    "world", f"agent {i}: value noise has mean {drift[i]!r}", agent=i
                ))
    if w.table is not None:
        if not np.all(np.isfinite(w.table)):
            out.append(Violation("world", "realized value table has non-finite entries"))
        for i in range(n):
            for m in range(1 << n):
                if not (m >> i) & 1 and np.any(w.table[:, i, m, :] != 0):
                    out.append(Violation(
                        "zero_value",
                        f"agent {i} has nonzero realized value under allocation {m}",
                        agent=i, mask=m,
                    ))
        mean = np.tensordot(w.weights, w.table, axes=1)
        if not np.allclose(mean, s.values, rtol=0, atol=1e-12):
            out.append(Violation("world", "expected values disagree with realized table"))

    if not np.all(np.isfinite(s.values)):
        out.append(Violation("value", "expected value table has non-finite entries"))
    for i in range(n):
        for m in range(1 << n):
            if not (m >> i) & 1:
                bad = np.flatnonzero(s.values[i, m] != 0)
                if bad.size:
                    out.append(Violation(
                        "zero_value",
                        f"agent {i} has nonzero value under allocation {m} "
                        f"(profile {s.profile_at(int(bad[0]))})",
                        agent=i, mask=m, profile=s.profile_at(int(bad[0])),
                    ))
                continue
            for group in _locality_groups(s, m):
                vals = s.values[i, m, group]
                if np.any(vals != vals[0]):
                    p = group[int(np.flatnonzero(vals != vals[0])[0])]
                    out.append(Violation(
                        "locality",
                        f"agent {i} allocation {m}: value depends on unallocated "
                        f"agents' types (profile {s.profile_at(p)})",
                        agent=i, mask=m, profile=s.profile_at(p),
                    ))
    return out
