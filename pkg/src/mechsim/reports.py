"""CSV emission with fixed column order and 17-significant-digit floats."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from mechsim.audit import AuditReport
from mechsim.mechanisms import RoundRecord
from mechsim.model import Scenario, enumerate_profiles
from mechsim.welfare import WelfareSolution


def fmt(x) -> str:
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    # + 0.0 folds negative zero
    return format(float(x) + 0.0, ".17g")


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _cols(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i}" for i in range(n)]


def welfare_table(sol: WelfareSolution):
    s = sol.scenario
    n = s.n_agents
    header = ["profile_index", "profile_labels", "W"] + _cols("W_minus", n) + ["allocation_bitmask"]
    rows = []
    for p, prof in enumerate(enumerate_profiles(s)):
        rows.append(
            [p, s.profile_label(prof), fmt(sol.W(prof))]
            + [fmt(sol.W_minus(i, prof)) for i in range(n)]
            + [sol.allocation(prof)]
        )
    return header, rows


def trace_table(s: Scenario, records: Sequence[RoundRecord]):
    n = s.n_agents
    header = (
        ["t", "true_profile", "reported_profile", "allocation_bitmask", "omega_index"]
        + _cols("V", n) + _cols("Vhat", n) + _cols("p", n) + _cols("u", n)
    )
    rows = []
    for r in records:
        rows.append(
            [r.t, s.profile_label(r.true_profile), s.profile_label(r.reported_profile),
             r.allocation, r.omega]
            + [fmt(x) for x in r.values]
            + [fmt(x) for x in r.value_reports]
            + [fmt(x) for x in r.payments]
            + [fmt(x) for x in r.utilities]
        )
    return header, rows


def verdict_table(report: AuditReport):
    header = ["property", "profile_index", "agent", "deviation", "margin", "verdict"]
    rows = []
    for v in report.verdicts.values():
        for r in v.rows:
            rows.append([
                r.prop, r.profile_index, "" if r.agent is None else r.agent,
                r.deviation, fmt(r.margin), "pass" if r.passed else "fail",
            ])
    return header, rows


def utility_table_rows(s: Scenario, report: AuditReport):
    header = ["profile_index", "agent", "report_kind", "deviation_type", "utility"]
    rows = []
    for p, prof in enumerate(enumerate_profiles(s)):
        for i in range(s.n_agents):
            for k in range(s.shape[i]):
                kind = "truth" if k == prof[i] else "deviation"
                rows.append([p, i, kind, s.type_names[i][k], fmt(report.utilities[i, p, k])])
    return header, rows


def payment_table(s: Scenario, report: AuditReport):
    header = ["profile_index"] + _cols("p", s.n_agents) + ["payment_sum"]
    rows = []
    for p in range(s.n_profiles):
        pay = report.payments[p]
        rows.append([p] + [fmt(x) for x in pay] + [fmt(sum(float(x) for x in pay))])
    return header, rows


def write_audit(out: str | Path, s: Scenario, report: AuditReport) -> list[Path]:
    out = Path(out)
    stem = report.rule.lower()
    paths = []
    for suffix, (header, rows) in (
        ("verdicts", verdict_table(report)),
        ("utilities", utility_table_rows(s, report)),
        ("payments", payment_table(s, report)),
    ):
        path = out / f"{stem}_{suffix}.csv"
        write_csv(path, header, rows)
        paths.append(path)
    return paths
