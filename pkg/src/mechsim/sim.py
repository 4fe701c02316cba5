"""Seeded multi-round episodes, the bundled market scenario, and the Monte-Carlo
utility estimator.

Randomness comes from Philox counter-based generators keyed by
``SeedSequence(seed, spawn_key=(t, stream))``: stream ``i < n`` drives agent
``i``'s type transition in round ``t`` and stream ``n`` the world draw. Draws
are inverse-CDF on ``Generator.random``. A batch of ``E`` episodes takes
element ``e`` of each stream's ``E`` draws, so episode 0 of any batch equals
the single episode for the same seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from mechsim.mechanisms import MechanismRule, RoundRecord, draw_index
from mechsim.model import BUYER, SELLER, Scenario, ValueParams, parametric_values
from mechsim.scenario_io import golden_path, scenario_from_dict
from mechsim.welfare import WelfareSolution


def stream(seed: int, t: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(t, key))))


@dataclass(frozen=True)
class Misreport:
    """Agent ``agent`` reports ``report`` in round ``round`` (every round if None).

    ``report`` is a fixed type index, or a mapping from true type to reported type.
    """

    agent: int
    report: int | Mapping[int, int]
    round: int | None = None

    def reported(self, true_type: int) -> int:
        if isinstance(self.report, Mapping):
            return int(self.report.get(true_type, true_type))
        return int(self.report)

    def applies(self, t: int) -> bool:
        return self.round is None or self.round == t


@dataclass(frozen=True)
class EpisodeConfig:
    scenario: Scenario
    initial: tuple[int, ...]
    horizon: int
    seed: int
    misreports: tuple[Misreport, ...] = ()

    def __post_init__(self):
        s = self.scenario
        object.__setattr__(self, "initial", tuple(int(k) for k in self.initial))
        object.__setattr__(self, "misreports", tuple(self.misreports))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if len(self.initial) != s.n_agents or any(
            not 0 <= k < s.shape[i] for i, k in enumerate(self.initial)
        ):
            raise ValueError(f"initial profile {self.initial} is not a valid profile")
        for m in self.misreports:
            if not 0 <= m.agent < s.n_agents:
                raise ValueError(f"misreport names unknown agent {m.agent}")
            targets = m.report.values() if isinstance(m.report, Mapping) else [m.report]
            if any(not 0 <= int(k) < s.shape[m.agent] for k in targets):
                raise ValueError(f"misreport target out of range for agent {m.agent}")
            if m.round is not None and not 0 <= m.round < self.horizon:
                raise ValueError(f"misreport round {m.round} outside horizon")


@dataclass(frozen=True, eq=False)
class EpisodeTrace:
    records: tuple[RoundRecord, ...]
    discounted_utility: np.ndarray
    truncation_bound: float

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    episodes: int
    horizon: int
    truncation_bound: float


def stage_utility_bound(sol: WelfareSolution, rule: MechanismRule) -> np.ndarray:
    """Per-agent max |value + payment| over truthful rounds (any profile, any world state)."""
    s = sol.scenario
    bound = np.zeros(s.n_agents)
    for p in range(s.n_profiles):
        prof = s.profile_at(p)
        mask = rule.allocate(sol, prof)
        for w in range(s.world.size):
            v = s.realized_values(mask, prof, w)
            bound = np.maximum(bound, np.abs(v + rule.pay(sol, prof, mask, v)))
    return bound


def standard_error(x: np.ndarray) -> float:
    """Standard error of the mean; samples are shifted by the first one so a
    constant sample gives exactly zero."""
    if len(x) < 2:
        return float("inf")
    return float(np.std(x - x[0], ddof=1) / math.sqrt(len(x)))


def truncation_bound(delta: float, horizon: int, stage_bound: float) -> float:
    """Geometric tail: sum of delta**t * stage_bound over t >= horizon."""
    return delta**horizon * stage_bound / (1.0 - delta)


def simulate(
    cfg: EpisodeConfig,
    sol: WelfareSolution,
    rule: MechanismRule,
    episodes: int = 1,
    record: bool = False,
) -> tuple[np.ndarray, list[RoundRecord]]:
    """Run ``episodes`` independent episodes in lockstep.

    Returns per-episode discounted utilities, shape (episodes, agents), and the
    round records of episode 0 when ``record`` is set.
    """
    s = sol.scenario
    n = s.n_agents
    delta = s.discount
    alloc_cache: dict[tuple[int, ...], int] = {}
    pay_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    world_cdf = np.cumsum(s.world.weights)
    kernel_cdf = [np.cumsum(k, axis=-1) for k in s.kernels]

    def allocate(reported):
        if reported not in alloc_cache:
            alloc_cache[reported] = rule.allocate(sol, reported)
        return alloc_cache[reported]

    def settle(reported, true, w):
        key = (reported, true, w)
        if key not in pay_cache:
            mask = allocate(reported)
            v = s.realized_values(mask, true, w)
            pay_cache[key] = (v, np.asarray(rule.pay(sol, reported, mask, v), dtype=float))
        return pay_cache[key]

    types = np.tile(np.asarray(cfg.initial), (episodes, 1))
    total = np.zeros((episodes, n))
    records: list[RoundRecord] = []
    for t in range(cfg.horizon):
        reports = types.copy()
        for m in cfg.misreports:
            if m.applies(t):
                reports[:, m.agent] = [m.reported(k) for k in types[:, m.agent]]
        if s.world.size > 1:
            omegas = draw_index(world_cdf, stream(cfg.seed, t, n).random(episodes))
        else:
            omegas = np.zeros(episodes, dtype=int)
        # Rounds depend on (reported, true, omega) only; settle each distinct triple once.
        keys = np.concatenate([reports, types, omegas[:, None]], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        stage = np.empty((len(uniq), n))
        masks = np.empty(len(uniq), dtype=int)
        for u, row in enumerate(uniq):
            rep, tru, w = tuple(int(x) for x in row[:n]), tuple(int(x) for x in row[n:2 * n]), int(row[-1])
            v, pay = settle(rep, tru, w)
            stage[u] = v + pay
            masks[u] = allocate(rep)
        total += delta**t * stage[inverse]
        if record:
            rep0, tru0, w0 = tuple(int(x) for x in reports[0]), tuple(int(x) for x in types[0]), int(omegas[0])
            v, pay = settle(rep0, tru0, w0)
            records.append(RoundRecord(
                t=t, true_profile=tru0, reported_profile=rep0, allocation=allocate(rep0),
                omega=w0, values=v, value_reports=v.copy(), payments=pay, utilities=v + pay,
            ))
        ep_masks = masks[inverse]
        nxt = np.empty_like(types)
        for i in range(n):
            draws = stream(cfg.seed, t, i).random(episodes)
            cdf = kernel_cdf[i][ep_masks, types[:, i]]
            nxt[:, i] = np.minimum((cdf <= draws[:, None]).sum(axis=1), s.shape[i] - 1)
        types = nxt
    return total, records


def run_episode(cfg: EpisodeConfig, sol: WelfareSolution, rule: MechanismRule) -> EpisodeTrace:
    total, records = simulate(cfg, sol, rule, episodes=1, record=True)
    bound = stage_utility_bound(sol, rule)
    tail = truncation_bound(sol.scenario.discount, cfg.horizon, float(bound.max()))
    return EpisodeTrace(tuple(records), total[0], tail)


def monte_carlo_utility(
    sol: WelfareSolution,
    rule: MechanismRule,
    agent: int,
    initial: Sequence[int],
    report: int,
    episodes: int = 10_000,
    horizon: int = 50,
    seed: int = 0,
) -> MonteCarloEstimate:
    """Average realized discounted utility of ``agent`` misreporting ``report`` in
    round 0 only, with everyone truthful afterwards."""
    cfg = EpisodeConfig(
        scenario=sol.scenario,
        initial=tuple(initial),
        horizon=horizon,
        seed=seed,
        misreports=(Misreport(agent, report, round=0),),
    )
    total, _ = simulate(cfg, sol, rule, episodes=episodes)
    x = total[:, agent]
    stderr = standard_error(x)
    tail = truncation_bound(
        sol.scenario.discount, horizon, float(stage_utility_bound(sol, rule)[agent])
    )
    return MonteCarloEstimate(float(x.mean()), stderr, episodes, horizon, tail)


# -- the bundled market scenario ----------------------------------------------


def market_scenario(
    k1: float,
    k2: float,
    k3: float,
    degrade: float,
    recover: float,
    const_payment: float,
    discount: float = 0.7,
    n_sellers: int = 2,
    name: str = "market",
) -> Scenario:
    """One buyer (agent 0) and ``n_sellers`` sellers with H/M/L types (1, 0.75, 0.5).

    A selected seller drops one level toward L with probability ``degrade``; an
    idle seller climbs one level toward H with probability ``recover``. The
    buyer's workload drifts independently of the allocation: stay 1/2, each
    neighbour 1/4, mass past an end stays put.
    """
    n = 1 + n_sellers
    labels = [[1.0, 0.75, 0.5]] * n
    roles = [BUYER] + [SELLER] * n_sellers
    params = ValueParams(k1, k2, k3)
    buyer_row = np.array([[0.75, 0.25, 0.0], [0.25, 0.5, 0.25], [0.0, 0.25, 0.75]])
    kernels = [np.broadcast_to(buyer_row, (1 << n, 3, 3)).copy()]
    for j in range(1, n):
        k = np.zeros((1 << n, 3, 3))
        for m in range(1 << n):
            for t in range(3):
                if (m >> j) & 1:
                    k[m, t, min(t + 1, 2)] += degrade
                    k[m, t, t] += 1.0 - degrade
                else:
                    k[m, t, max(t - 1, 0)] += recover
                    k[m, t, t] += 1.0 - recover
        kernels.append(k)
    return Scenario(
        type_labels=labels,
        type_names=[["H", "M", "L"]] * n,
        roles=roles,
        values=parametric_values(labels, roles, params),
        kernels=kernels,
        discount=discount,
        const_payment=const_payment,
        value_params=params,
        name=name,
    )


def golden_scenario() -> Scenario:
    """The bundled three-agent market scenario shipped with the package."""
    return scenario_from_dict(json.loads(golden_path().read_text()))
