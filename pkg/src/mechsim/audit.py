"""Exhaustive property checks over every profile and every unilateral misreport.

Utilities are expected discounted utilities of a one-shot deviation: agent
``i`` misreports its own type in the current round only, everyone else is
truthful, and play is truthful from the next round on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mechsim.mechanisms import MechanismRule
from mechsim.model import BUYER, SELLER, enumerate_profiles, expected_value
from mechsim.welfare import WelfareSolution

log = logging.getLogger(__name__)

AUDIT_TOL = 1e-6
PROPERTIES = ("EFF", "EPIC", "EPIR", "PC", "BB")
VALUE_SHIFTS = (-1.0, -0.25, 0.5, 1.0)
PC_SCOPES = ("all", "allocated")


def deviation_utility(sol: WelfareSolution, i: int, profile: Sequence[int], report: int) -> float:
    """Closed-form GDPM utility of agent ``i`` reporting ``report`` at true ``profile``.

    Equals total expected welfare of the allocation picked from the reports,
    evaluated at true types, plus discounted continuation welfare, minus
    W_{-i}. At a truthful report this is W - W_{-i}.
    """
    s = sol.scenario
    profile = tuple(profile)
    reported = profile[:i] + (report,) + profile[i + 1:]
    mask = sol.allocation(reported)
    stage = 0.0
    for j in range(s.n_agents):
        stage += expected_value(s, j, mask, profile)
    return stage + s.discount * float(sol.expected_W(mask)[profile]) - sol.W_minus(i, profile)


def joint_row(sol: WelfareSolution, profile: Sequence[int], mask: int) -> np.ndarray:
    """Distribution of the next full profile (flattened, profile-index order)."""
    s = sol.scenario
    row = np.ones(())
    for i, k in enumerate(profile):
        row = np.multiply.outer(row, s.kernels[i][mask, k])
    return row.reshape(-1)


class OneShotEvaluator:
    """Direct evaluation of one-shot deviation utilities for an arbitrary rule.

    The truthful continuation value of each agent is the solution of the
    policy-evaluation system (I - delta P) U = r under the rule's allocation
    at truthful reports.
    """

    def __init__(self, sol: WelfareSolution, rule: MechanismRule):
        self.sol = sol
        self.rule = rule
        s = sol.scenario
        self.profiles = enumerate_profiles(s)
        n_p = len(self.profiles)
        rewards = np.empty((n_p, s.n_agents))
        trans = np.empty((n_p, n_p))
        for p, prof in enumerate(self.profiles):
            rewards[p] = self.stage(prof, prof)
            trans[p] = joint_row(sol, prof, rule.allocate(sol, prof))
        self.continuation = np.linalg.solve(np.eye(n_p) - s.discount * trans, rewards).T

    def stage(self, reported: Sequence[int], profile: Sequence[int]) -> np.ndarray:
        """Expected stage utilities (value + payment) with truthful value reports."""
        s = self.sol.scenario
        mask = self.rule.allocate(self.sol, reported)
        total = np.zeros(s.n_agents)
        for w, weight in enumerate(s.world.weights):
            v = s.realized_values(mask, profile, w)
            total += float(weight) * (v + self.rule.pay(self.sol, reported, mask, v))
        return total

    def utility(self, i: int, profile: Sequence[int], report: int) -> float:
        s = self.sol.scenario
        profile = tuple(profile)
        reported = profile[:i] + (report,) + profile[i + 1:]
        mask = self.rule.allocate(self.sol, reported)
        future = float(joint_row(self.sol, profile, mask) @ self.continuation[i])
        return float(self.stage(reported, profile)[i]) + s.discount * future


def utility_table(sol: WelfareSolution, rule: MechanismRule) -> np.ndarray:
    """``table[i, p, k]``: utility of agent ``i`` at profile ``p`` reporting own type ``k``.

    Entries for ``k`` beyond agent ``i``'s type count are NaN.
    """
    s = sol.scenario
    profiles = enumerate_profiles(s)
    table = np.full((s.n_agents, len(profiles), max(s.shape)), np.nan)
    if rule.deviation_utility is not None:
        f = lambda i, prof, k: rule.deviation_utility(sol, i, prof, k)  # noqa: E731
    else:
        f = OneShotEvaluator(sol, rule).utility
    for i in range(s.n_agents):
        for p, prof in enumerate(profiles):
            for k in range(s.shape[i]):
                table[i, p, k] = f(i, prof, k)
    return table


# -- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    prop: str
    profile_index: int
    agent: int | None
    deviation: str
    margin: float
    passed: bool


@dataclass
class PropertyVerdict:
    name: str
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def counterexamples(self) -> list[CheckRow]:
        return [r for r in self.rows if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    @property
    def worst_margin(self) -> float:
        return min((r.margin for r in self.rows), default=float("inf"))

    def add(self, profile_index, agent, deviation, margin, tol):
        self.rows.append(CheckRow(self.name, profile_index, agent, deviation, float(margin), margin >= -tol))


@dataclass
class AuditReport:
    rule: str
    verdicts: dict[str, PropertyVerdict]
    utilities: np.ndarray
    payments: np.ndarray
    epic_comparisons: int = 0
    value_report_checks: int = 0
    value_report_max_change: float = 0.0

    def verdict_row(self) -> tuple[bool, ...]:
        return tuple(self.verdicts[p].passed for p in PROPERTIES)


def check_epic(
    sol: WelfareSolution, rule: MechanismRule, table: np.ndarray | None = None, tol: float = AUDIT_TOL
) -> tuple[PropertyVerdict, dict]:
    """Type misreports must not raise expected utility by more than ``tol``;
    value misreports must not raise the deviator's payment.

    Returns the verdict and coverage counters.
    """
    s = sol.scenario
    if table is None:
        table = utility_table(sol, rule)
    verdict = PropertyVerdict("EPIC")
    comparisons = 0
    for p, prof in enumerate(enumerate_profiles(s)):
        for i in range(s.n_agents):
            truth = table[i, p, prof[i]]
            for k in range(s.shape[i]):
                if k == prof[i]:
                    continue
                comparisons += 1
                verdict.add(p, i, s.type_names[i][k], truth - table[i, p, k], tol)

    value_checks = 0
    max_change = 0.0
    for p, prof in enumerate(enumerate_profiles(s)):
        mask = rule.allocate(sol, prof)
        for w in range(s.world.size):
            observed = s.realized_values(mask, prof, w)
            base = rule.pay(sol, prof, mask, observed)
            for i in range(s.n_agents):
                for shift in VALUE_SHIFTS:
                    vhat = observed.copy()
                    vhat[i] = observed[i] + shift
                    change = float(rule.pay(sol, prof, mask, vhat)[i] - base[i])
                    max_change = max(max_change, abs(change))
                    value_checks += 1
                    verdict.add(p, i, f"value{shift:+g}@omega{w}", -change, tol)
    log.info(
        "%s EPIC coverage: %d type comparisons, %d value-report checks",
        rule.name, comparisons, value_checks,
    )
    return verdict, {
        "epic_comparisons": comparisons,
        "value_report_checks": value_checks,
        "value_report_max_change": max_change,
    }


def check_epir(
    sol: WelfareSolution, rule: MechanismRule, table: np.ndarray | None = None, tol: float = AUDIT_TOL
) -> PropertyVerdict:
    s = sol.scenario
    if table is None:
        table = utility_table(sol, rule)
    verdict = PropertyVerdict("EPIR")
    for p, prof in enumerate(enumerate_profiles(s)):
        for i in range(s.n_agents):
            verdict.add(p, i, "", table[i, p, prof[i]], tol)
    return verdict


def best_response(table: np.ndarray, i: int, p: int, truth: int, n_types: int, tol: float) -> int:
    """Agent ``i``'s utility-maximizing report, or the truth unless some
    misreport gains strictly more than ``tol``."""
    utils = table[i, p, :n_types]
    best = int(np.argmax(utils))
    return best if utils[best] > utils[truth] + tol else truth


def check_eff(
    sol: WelfareSolution, rule: MechanismRule, table: np.ndarray | None = None, tol: float = AUDIT_TOL
) -> PropertyVerdict:
    """The rule's allocation at the reports it induces must attain the Bellman max.

    For each true profile and each agent, the reports are the agent's unilateral
    best response with everyone else truthful (truth when no misreport pays).
    """
    s = sol.scenario
    if table is None:
        table = utility_table(sol, rule)
    verdict = PropertyVerdict("EFF")
    slack = 2.0 * sol.tol
    for p, prof in enumerate(enumerate_profiles(s)):
        q = sol.q_values(prof)
        best = max(q.values())
        for i in range(s.n_agents):
            k = best_response(table, i, p, prof[i], s.shape[i], tol)
            reported = prof[:i] + (k,) + prof[i + 1:]
            mask = rule.allocate(sol, reported)
            dev = "" if k == prof[i] else s.type_names[i][k]
            verdict.add(p, i, dev, q[mask] - best, slack)
    return verdict


def equilibrium_payments(sol: WelfareSolution, rule: MechanismRule) -> np.ndarray:
    """Payments at truthful type reports with expected values as value reports."""
    s = sol.scenario
    out = np.empty((s.n_profiles, s.n_agents))
    for p, prof in enumerate(enumerate_profiles(s)):
        mask = rule.allocate(sol, prof)
        vhat = np.array([expected_value(s, j, mask, prof) for j in range(s.n_agents)])
        out[p] = rule.pay(sol, prof, mask, vhat)
    return out


def check_pc_bb(
    sol: WelfareSolution,
    rule: MechanismRule,
    payments: np.ndarray | None = None,
    tol: float = AUDIT_TOL,
    pc_scope: str = "all",
) -> tuple[PropertyVerdict, PropertyVerdict]:
    """Payment consistency (buyers pay, sellers receive) and budget balance
    (transfers sum to at most zero), per profile at equilibrium.

    ``pc_scope="all"`` holds every seller to the receive side each round;
    ``"allocated"`` only the sellers in the allocation.
    """
    if pc_scope not in PC_SCOPES:
        raise ValueError(f"pc_scope must be one of {PC_SCOPES}")
    s = sol.scenario
    if payments is None:
        payments = equilibrium_payments(sol, rule)
    pc, bb = PropertyVerdict("PC"), PropertyVerdict("BB")
    for p, prof in enumerate(enumerate_profiles(s)):
        mask = rule.allocate(sol, prof)
        for i in range(s.n_agents):
            if s.roles[i] == BUYER:
                pc.add(p, i, "", -payments[p, i], tol)
            elif s.roles[i] == SELLER and (pc_scope == "all" or (mask >> i) & 1):
                pc.add(p, i, "", payments[p, i], tol)
        bb.add(p, None, "", -float(np.sum(payments[p])), tol)
    return pc, bb


def audit_rule(
    sol: WelfareSolution, rule: MechanismRule, tol: float = AUDIT_TOL, pc_scope: str = "all"
) -> AuditReport:
    table = utility_table(sol, rule)
    payments = equilibrium_payments(sol, rule)
    epic, coverage = check_epic(sol, rule, table, tol)
    pc, bb = check_pc_bb(sol, rule, payments, tol, pc_scope)
    verdicts = {
        "EFF": check_eff(sol, rule, table, tol),
        "EPIC": epic,
        "EPIR": check_epir(sol, rule, table, tol),
        "PC": pc,
        "BB": bb,
    }
    return AuditReport(rule.name, verdicts, table, payments, **coverage)


def audit(
    sol: WelfareSolution,
    rules: Sequence[MechanismRule],
    tol: float = AUDIT_TOL,
    pc_scope: str = "all",
) -> list[AuditReport]:
    return [audit_rule(sol, r, tol, pc_scope) for r in rules]


def summary_matrix(reports: Sequence[AuditReport]) -> str:
    """Verdict matrix, one row per mechanism, one column per property."""
    width = max([len(r.rule) for r in reports] + [5])
    lines = [" " * width + "".join(f"{p:>6}" for p in PROPERTIES)]
    for r in reports:
        marks = "".join(f"{('✓' if ok else '×'):>6}" for ok in r.verdict_row())
        lines.append(f"{r.rule:<{width}}{marks}")
    return "\n".join(lines)
