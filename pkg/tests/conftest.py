from __future__ import annotations

import numpy as np
import pytest

from mechsim.model import BUYER, SELLER, Scenario, members_of
from mechsim.sim import golden_scenario
from mechsim.welfare import solve_all


def local_values(rng, shape, roles, scale=1.0):
    """Random value tables that respect locality and are zero off-allocation.

    Buyers draw from [0, scale], sellers from [-scale, 0].
    """
    n = len(shape)
    values = np.zeros((n, 1 << n) + tuple(shape))
    for m in range(1 << n):
        mem = members_of(m, n)
        for i in mem:
            sub = [shape[j] if j in mem else 1 for j in range(n)]
            draw = rng.uniform(0, scale, size=sub)
            if roles[i] == SELLER:
                draw = -draw
            values[i, m] = np.broadcast_to(draw, shape)
    return values.reshape(n, 1 << n, -1)


def random_kernels(rng, shape, n_agents):
    out = []
    for t in shape:
        k = rng.dirichlet(np.ones(t), size=(1 << n_agents, t))
        out.append(k)
    return out


def random_scenario(seed, shape=(2, 2), delta=0.5, roles=None, scale=1.0):
    rng = np.random.default_rng(seed)
    n = len(shape)
    roles = roles or [BUYER] + [SELLER] * (n - 1)
    return Scenario(
        type_labels=[list(range(t)) for t in shape],
        roles=roles,
        values=local_values(rng, shape, roles, scale),
        kernels=random_kernels(rng, shape, n),
        discount=delta,
        name=f"random-{seed}",
    )


def identity_kernels(shape, n_agents):
    return [np.broadcast_to(np.eye(t), (1 << n_agents, t, t)).copy() for t in shape]


def zero_scenario(shape=(3, 3, 3), delta=0.7):
    n = len(shape)
    rng = np.random.default_rng(0)
    return Scenario(
        type_labels=[list(range(t)) for t in shape],
        roles=[BUYER] + [SELLER] * (n - 1),
        values=np.zeros((n, 1 << n, int(np.prod(shape)))),
        kernels=random_kernels(rng, shape, n),
        discount=delta,
        const_payment=0.3,
        name="zero",
    )


@pytest.fixture(scope="session")
def golden():
    return golden_scenario()


@pytest.fixture(scope="session")
def golden_sol(golden):
    return solve_all(golden)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
