"""Command-line entry point.

Exit codes: 0 success, 1 validation violations, 2 usage or parse error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from mechsim.audit import AUDIT_TOL, PC_SCOPES, audit, summary_matrix
from mechsim.mechanisms import MechanismRule, const_rule, gdpm_rule
from mechsim.model import Scenario, validate_scenario
from mechsim.reports import fmt, trace_table, welfare_table, write_audit, write_csv
from mechsim.scenario_io import ScenarioFormatError, load_scenario
from mechsim.sim import (
    EpisodeConfig,
    Misreport,
    run_episode,
    simulate,
    stage_utility_bound,
    standard_error,
    truncation_bound,
)
from mechsim.welfare import DEFAULT_TOL, SolverError, solve_all

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvalidScenario(Exception):
    pass


def _type_index(s: Scenario, agent: int, token: str) -> int:
    names = s.type_names[agent]
    if token in names:
        return names.index(token)
    try:
        k = int(token)
    except ValueError:
        raise UsageError(f"agent {agent} has no type {token!r}") from None
    if not 0 <= k < s.shape[agent]:
        raise UsageError(f"agent {agent} has no type {token!r}")
    return k


def parse_deviation(s: Scenario, text: str) -> Misreport:
    """``agent=1,round=0,type=H`` (round omitted means every round)."""
    fields = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise UsageError(f"bad --deviate item {part!r}; expected key=value")
        fields[key.strip()] = val.strip()
    if set(fields) - {"agent", "round", "type"} or not {"agent", "type"} <= set(fields):
        raise UsageError("--deviate needs agent=..,type=.. and optionally round=..")
    try:
        agent = int(fields["agent"])
        rnd = int(fields["round"]) if "round" in fields else None
    except ValueError:
        raise UsageError(f"bad --deviate value in {text!r}") from None
    if not 0 <= agent < s.n_agents:
        raise UsageError(f"--deviate names unknown agent {agent}")
    return Misreport(agent, _type_index(s, agent, fields["type"]), rnd)


def _rules(s: Scenario, args) -> list[MechanismRule]:
    rules = []
    if args.mechanism in ("gdpm", "all"):
        rules.append(gdpm_rule())
    if args.mechanism in ("const", "all"):
        p = args.const_p if args.const_p is not None else s.const_payment
        if p is None:
            raise UsageError("CONST needs --const-p (the scenario file sets no const_payment)")
        if not p > 0:
            raise UsageError("--const-p must be positive")
        rules.append(const_rule(p))
    return rules


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    s = load_scenario(args.scenario)
    violations = validate_scenario(s)
    for v in violations:
        print(f"VIOLATION: {v}")
    if violations:
        return EXIT_INVALID
    print(f"OK: {args.scenario} is valid ({s.n_agents} agents, {s.n_profiles} profiles)")
    return EXIT_OK


def _load_valid(path) -> Scenario:
    s = load_scenario(path)
    violations = validate_scenario(s)
    if violations:
        for v in violations:
            print(f"VIOLATION: {v}", file=sys.stderr)
        raise InvalidScenario(f"{path} violates {len(violations)} model assumption(s)")
    return s


def cmd_solve(args) -> int:
    s = _load_valid(args.scenario)
    sol = solve_all(s, tol=args.tol)
    for m in (sol.full,) + sol.reduced:
        print(f"{m.name}: {m.iterations} iterations, bellman residual {m.bellman_residual:.3e}")
    path = _out_dir(args) / "welfare.csv"
    write_csv(path, *welfare_table(sol))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_audit(args) -> int:
    s = _load_valid(args.scenario)
    rules = _rules(s, args)
    sol = solve_all(s, tol=args.tol)
    reports = audit(sol, rules, tol=args.audit_tol, pc_scope=args.pc_scope)
    print(summary_matrix(reports))
    out = _out_dir(args)
    for r in reports:
        print(
            f"{r.rule}: {r.epic_comparisons} EPIC comparisons, "
            f"{r.value_report_checks} value-report checks, "
            + ", ".join(f"{k} worst margin {fmt(v.worst_margin)}" for k, v in r.verdicts.items())
        )
        write_audit(out, s, r)
    return EXIT_OK


def cmd_report(args) -> int:
    s = _load_valid(args.scenario)
    rules = _rules(s, args)
    sol = solve_all(s, tol=args.tol)
    out = _out_dir(args)
    write_csv(out / "welfare.csv", *welfare_table(sol))
    reports = audit(sol, rules, tol=args.audit_tol, pc_scope=args.pc_scope)
    for r in reports:
        write_audit(out, s, r)
    matrix = summary_matrix(reports)
    (out / "summary.txt").write_text(matrix + "\n")
    print(matrix)
    print(f"wrote reports to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _load_valid(args.scenario)
    if args.mechanism == "all":
        raise UsageError("simulate runs one mechanism; pick --mechanism gdpm or const")
    if args.horizon < 1 or args.episodes < 1:
        raise UsageError("--horizon and --episodes must be at least 1")
    if args.initial is None:
        initial = tuple(k // 2 for k in s.shape)
    else:
        tokens = args.initial.split(",")
        if len(tokens) != s.n_agents:
            raise UsageError(f"--initial needs {s.n_agents} comma-separated types")
        initial = tuple(_type_index(s, i, tok.strip()) for i, tok in enumerate(tokens))
    misreports = tuple(parse_deviation(s, d) for d in args.deviate)
    try:
        cfg = EpisodeConfig(s, initial, args.horizon, args.seed, misreports)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rule = _rules(s, args)[0]
    sol = solve_all(s, tol=args.tol)
    trace = run_episode(cfg, sol, rule)
    path = _out_dir(args) / "trace.csv"
    write_csv(path, *trace_table(s, trace.records))
    for i, u in enumerate(trace.discounted_utility):
        print(f"agent {i}: realized discounted utility {fmt(u)}")
    print(f"truncation bound {fmt(trace.truncation_bound)}")
    if args.episodes > 1:
        total, _ = simulate(cfg, sol, rule, episodes=args.episodes)
        bound = stage_utility_bound(sol, rule)
        for i in range(s.n_agents):
            x = total[:, i]
            se = standard_error(x)
            tail = truncation_bound(s.discount, args.horizon, float(bound[i]))
            print(f"agent {i}: mean over {args.episodes} episodes {fmt(x.mean())} "
                  f"± {fmt(se)} (truncation {fmt(tail)})")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file")
    common.add_argument("--tol", type=float, default=DEFAULT_TOL, help="value-iteration error bound")
    common.add_argument("--audit-tol", type=float, default=AUDIT_TOL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--horizon", type=int, default=50)
    common.add_argument("--episodes", type=int, default=1)
    common.add_argument("--mechanism", choices=("gdpm", "const", "all"), default=None)
    common.add_argument("--const-p", type=float, default=None, help="override CONST's payment")
    common.add_argument("--pc-scope", choices=PC_SCOPES, default="all",
                        help="sellers held to payment consistency")
    common.add_argument("--out", default="mechsim-out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="mechsim", description="Dynamic pivot mechanism simulator and auditor")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check model assumptions")
    sub.add_parser("solve", parents=[common], help="solve welfare MDPs, write welfare.csv")
    sub.add_parser("audit", parents=[common], help="verdict matrix and audit CSVs")
    sim = sub.add_parser("simulate", parents=[common], help="run a seeded episode")
    sim.add_argument("--initial", default=None, help="initial types, e.g. H,M,L (default: each agent's middle type)")
    sim.add_argument("--deviate", action="append", default=[],
                     help="misreport, e.g. agent=1,round=0,type=H (repeatable)")
    sub.add_parser("report", parents=[common], help="write every CSV and the summary table")
    return ap


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.mechanism is None:
        args.mechanism = "gdpm" if args.command == "simulate" else "all"
    try:
        return COMMANDS[args.command](args)
    except (ScenarioFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver failure in {exc.mdp}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
