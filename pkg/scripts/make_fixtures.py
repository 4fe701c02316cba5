"""Regenerate the frozen test fixtures under tests/data/v1.

Run once and review the diff; tests compare against these files byte for byte,
so a change here means the RNG scheme, the solver or the CSV format changed.

    python3 scripts/make_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

from mechsim.mechanisms import gdpm_rule, next_types
from mechsim.reports import trace_table, welfare_table, write_csv
from mechsim.sim import EpisodeConfig, Misreport, golden_scenario, run_episode, stream
from mechsim.welfare import solve_all

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "v1"


def type_walk(s, sol, seed=42, rounds=20, start=(1, 1, 1)):
    """Types visited under the efficient allocation with per-(round, agent) streams."""
    prof = tuple(start)
    walk = [list(prof)]
    for t in range(rounds):
        mask = sol.allocation(prof)
        gens = [stream(seed, t, i) for i in range(s.n_agents)]
        prof = next_types(s, prof, mask, gens)
        walk.append(list(prof))
    return walk


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    s = golden_scenario()
    sol = solve_all(s)
    walk = {"seed": 42, "start": [1, 1, 1], "profiles": type_walk(s, sol)}
    (OUT / "golden_type_walk_seed42.json").write_text(json.dumps(walk) + "\n")
    write_csv(OUT / "golden_welfare.csv", *welfare_table(sol))
    cfg = EpisodeConfig(s, (0, 1, 2), horizon=12, seed=7)
    write_csv(OUT / "golden_trace_seed7.csv", *trace_table(s, run_episode(cfg, sol, gdpm_rule()).records))
    dev = EpisodeConfig(s, (1, 1, 1), horizon=12, seed=7, misreports=(Misreport(1, 0, round=0),))
    write_csv(OUT / "golden_trace_seed7_deviate.csv", *trace_table(s, run_episode(dev, sol, gdpm_rule()).records))
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
