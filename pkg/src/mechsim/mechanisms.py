"""Two-stage round protocol with pluggable allocation and payment rules.

Stage A collects type reports and fixes the allocation; the world state then
realizes; in Stage B agents observe their realized values (at their true types)
and report them; payments are computed from reports only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mechsim.model import BUYER, SELLER, Scenario
from mechsim.welfare import WelfareSolution, efficient_allocation

AllocationRule = Callable[[WelfareSolution, Sequence[int]], int]
PaymentRule = Callable[[WelfareSolution, Sequence[int], int, np.ndarray], np.ndarray]
ValueReport = Callable[[int, float], float]


@dataclass(frozen=True)
class MechanismRule:
    """An allocation rule paired with a payment rule.

    ``deviation_utility`` optionally supplies a closed form for the expected
    utility of a one-shot type misreport; the auditor falls back to direct
    evaluation when it is absent.
    """

    name: str
    allocate: AllocationRule
    pay: PaymentRule
    deviation_utility: Callable | None = None


def gdpm_payment(
    sol: WelfareSolution, reported: Sequence[int], mask: int, value_reports: Sequence[float]
) -> np.ndarray:
    """Pivot transfer for every agent, allocated or not.

    p_i = sum of the others' reported values
          + delta * E[W_{-i}(next) | mask, reported] - W_{-i}(reported)
    """
    s = sol.scenario
    vhat = np.asarray(value_reports, dtype=float)
    delta = s.discount
    out = np.empty(s.n_agents)
    for i in range(s.n_agents):
        others = 0.0
        for j in range(s.n_agents):
            if j != i:
                others += float(vhat[j])
        red = sol.reduce(i, reported)
        cont = float(sol.expected_W_minus(i, mask)[red])
        out[i] = others + delta * cont - sol.W_minus(i, reported)
    return out


def const_payment(mask: int, p: float, roles: Sequence[str]) -> np.ndarray:
    """Each selected seller receives ``p``; buyers are charged ``p`` per selected
    seller, split evenly when there are several buyers."""
    n = len(roles)
    out = np.zeros(n)
    selected = [j for j in range(n) if roles[j] == SELLER and (mask >> j) & 1]
    buyers = [b for b in range(n) if roles[b] == BUYER]
    if not selected or not buyers:
        return out
    for j in selected:
        out[j] = p
    for b in buyers:
        out[b] = -p * len(selected) / len(buyers)
    return out


def gdpm_rule() -> MechanismRule:
    from mechsim.audit import deviation_utility

    return MechanismRule("GDPM", efficient_allocation, gdpm_payment, deviation_utility)


def const_rule(p: float) -> MechanismRule:
    if not p > 0:
        raise ValueError("CONST payment must be positive")

    def pay(sol, reported, mask, value_reports):
        return const_payment(mask, p, sol.scenario.roles)

    return MechanismRule("CONST", efficient_allocation, pay)


@dataclass(frozen=True, eq=False)
class RoundRecord:
    t: int
    true_profile: tuple[int, ...]
    reported_profile: tuple[int, ...]
    allocation: int
    omega: int
    values: np.ndarray
    value_reports: np.ndarray
    payments: np.ndarray
    utilities: np.ndarray


def run_round(
    rule: MechanismRule,
    sol: WelfareSolution,
    true_profile: Sequence[int],
    reported_profile: Sequence[int] | None = None,
    omega: int = 0,
    t: int = 0,
    value_reports: Sequence[ValueReport | None] | None = None,
) -> RoundRecord:
    """One round of the protocol.

    ``value_reports[i]``, when given, maps agent ``i``'s observed value to its
    report; otherwise the agent reports what it observed.
    """
    s = sol.scenario
    true_profile = tuple(true_profile)
    reported = true_profile if reported_profile is None else tuple(reported_profile)
    mask = rule.allocate(sol, reported)
    # Agents observe values at the allocation chosen from reports but at their true types.
    observed = s.realized_values(mask, true_profile, omega)
    vhat = observed.copy()
    if value_reports is not None:
        for i, f in enumerate(value_reports):
            if f is not None:
                vhat[i] = f(i, float(observed[i]))
    payments = np.asarray(rule.pay(sol, reported, mask, vhat), dtype=float)
    return RoundRecord(
        t=t,
        true_profile=true_profile,
        reported_profile=reported,
        allocation=mask,
        omega=omega,
        values=observed,
        value_reports=vhat,
        payments=payments,
        utilities=observed + payments,
    )


def draw_index(cdf: np.ndarray, u):
    """Inverse-CDF draw: the first index whose cumulative mass exceeds ``u``."""
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def next_types(
    s: Scenario,
    profile: Sequence[int],
    mask: int,
    rng: np.random.Generator | Sequence[np.random.Generator],
) -> tuple[int, ...]:
    """Sample every agent's next type independently from its own kernel row.

    ``rng`` is either one generator (one uniform per agent, in agent order) or a
    sequence holding one generator per agent.
    """
    gens = [rng] * s.n_agents if isinstance(rng, np.random.Generator) else list(rng)
    out = []
    for i, k in enumerate(profile):
        cdf = np.cumsum(s.kernels[i][mask, k])
        out.append(int(draw_index(cdf, gens[i].random())))
    return tuple(out)
