import numpy as np
import pytest

from mechsim.audit import (
    AUDIT_TOL,
    OneShotEvaluator,
    audit,
    audit_rule,
    check_eff,
    check_epic,
    check_epir,
    check_pc_bb,
    deviation_utility,
    summary_matrix,
    utility_table,
)
from mechsim.mechanisms import const_payment, const_rule, gdpm_rule
from mechsim.model import BUYER, SELLER, Scenario, enumerate_profiles, expected_value
from mechsim.welfare import solve_all

from conftest import identity_kernels, random_scenario, zero_scenario
from oracles import bellman_backup, joint_kernel, policy_utilities


@pytest.fixture(scope="module")
def golden_reports(golden, golden_sol):
    return {r.rule: r for r in audit(golden_sol, [gdpm_rule(), const_rule(golden.const_payment)])}


def test_truthful_utility_is_marginal_contribution(golden, golden_sol):
    for prof in enumerate_profiles(golden):
        for i in range(3):
            u = deviation_utility(golden_sol, i, prof, prof[i])
            assert abs(u - (golden_sol.W(prof) - golden_sol.W_minus(i, prof))) <= 2e-9


def test_zero_values_zero_utility_everywhere():
    sol = solve_all(zero_scenario())
    for prof in enumerate_profiles(sol.scenario):
        for i in range(3):
            for k in range(3):
                assert deviation_utility(sol, i, prof, k) == 0.0


def test_closed_form_agrees_with_policy_evaluation(golden_sol):
    # the generic evaluator knows nothing about the pivot structure
    gdpm = gdpm_rule()
    ev = OneShotEvaluator(golden_sol, gdpm)
    for prof in enumerate_profiles(golden_sol.scenario):
        for i in range(3):
            for k in range(3):
                assert ev.utility(i, prof, k) == pytest.approx(
                    deviation_utility(golden_sol, i, prof, k), abs=1e-8
                )


def test_const_utilities_match_explicit_oracle(golden, golden_sol):
    p = golden.const_payment
    rule = const_rule(p)

    def stage(prof, mask):
        k = golden.profile_index(prof)
        return golden.values[:, mask, k] + const_payment(mask, p, golden.roles)

    cont = policy_utilities(golden, golden_sol.allocation, stage)
    table = utility_table(golden_sol, rule)
    for prof in enumerate_profiles(golden):
        k = golden.profile_index(prof)
        for i in range(3):
            for r in range(3):
                rep = prof[:i] + (r,) + prof[i + 1:]
                mask = golden_sol.allocation(rep)
                ref = stage(prof, mask)[i] + golden.discount * joint_kernel(golden, mask)[k] @ cont[i]
                assert table[i, k, r] == pytest.approx(ref, abs=1e-10)


def test_epic_gdpm_passes_with_full_coverage(golden_reports):
    r = golden_reports["GDPM"]
    v = r.verdicts["EPIC"]
    assert v.passed and v.counterexamples == []
    assert r.epic_comparisons == 3 * 27 * 2
    assert r.value_report_checks == 27 * 3 * 4
    assert r.value_report_max_change == 0.0


def test_epic_const_has_profitable_misreport(golden_reports):
    v = golden_reports["CONST"].verdicts["EPIC"]
    assert not v.passed and len(v.counterexamples) >= 1
    assert all(c.margin < -AUDIT_TOL for c in v.counterexamples)


def test_epic_single_agent_constant_values():
    values = np.zeros((1, 2, 3))
    values[0, 1] = 0.4
    s = Scenario([[0, 1, 2]], [BUYER], values, identity_kernels((3,), 1), 0.6)
    sol = solve_all(s)
    for rule in (gdpm_rule(), const_rule(0.3)):
        verdict, cov = check_epic(sol, rule)
        assert verdict.passed
        assert cov["epic_comparisons"] == 3 * 2


def test_epir_gdpm_passes(golden_reports):
    assert golden_reports["GDPM"].verdicts["EPIR"].passed


def test_epir_const_fails_for_sellers_when_p_below_cost(golden, golden_sol):
    p = 0.01  # below every seller's cost k3 * theta^2
    verdict = check_epir(golden_sol, const_rule(p))
    assert not verdict.passed
    bad = {c.agent for c in verdict.counterexamples}
    assert bad <= {1, 2} and bad

    def stage(prof, mask):
        return golden.values[:, mask, golden.profile_index(prof)] + const_payment(mask, p, golden.roles)

    ref = policy_utilities(golden, golden_sol.allocation, stage)
    for c in verdict.counterexamples:
        assert ref[c.agent, c.profile_index] == pytest.approx(c.margin, abs=1e-10)
        assert ref[c.agent, c.profile_index] < 0


def test_epir_zero_values_pass_at_boundary():
    sol = solve_all(zero_scenario())
    v = check_epir(sol, gdpm_rule())
    assert v.passed and v.worst_margin == 0.0


def test_eff_gdpm_attains_bellman_max(golden_reports):
    assert golden_reports["GDPM"].verdicts["EFF"].passed


def test_eff_const_counterexamples_fail_brute_force_backup(golden, golden_sol, golden_reports):
    v = golden_reports["CONST"].verdicts["EFF"]
    assert not v.passed
    W = golden_sol.full.values.reshape(-1)
    backups = {m: bellman_backup(golden, W, m) for m in range(8)}
    for c in v.counterexamples:
        prof = golden.profile_at(c.profile_index)
        rep = list(prof)
        rep[c.agent] = golden.type_names[c.agent].index(c.deviation)
        mask = golden_sol.allocation(tuple(rep))
        best = max(b[c.profile_index] for b in backups.values())
        assert backups[mask][c.profile_index] < best - 1e-6


def test_eff_all_allocations_tie():
    s = zero_scenario(shape=(2, 2))
    sol = solve_all(s)
    for rule in (gdpm_rule(), const_rule(0.3)):
        assert check_eff(sol, rule).passed


def test_pc_bb_const_pass_gdpm_fail(golden_reports):
    c, g = golden_reports["CONST"].verdicts, golden_reports["GDPM"].verdicts
    assert c["PC"].passed and c["BB"].passed
    assert not g["PC"].passed and not g["BB"].passed


def test_gdpm_pc_failures_are_pivot_charges_on_idle_sellers(golden, golden_sol, golden_reports):
    report = golden_reports["GDPM"]
    for c in report.verdicts["PC"].counterexamples:
        prof = golden.profile_at(c.profile_index)
        assert golden.roles[c.agent] == SELLER
        assert not (golden_sol.allocation(prof) >> c.agent) & 1
    pc, _ = check_pc_bb(golden_sol, gdpm_rule(), pc_scope="allocated")
    assert pc.passed


def test_equilibrium_payments_use_expected_values(golden, golden_sol, golden_reports):
    pay = golden_reports["GDPM"].payments
    prof = (0, 1, 2)
    mask = golden_sol.allocation(prof)
    vhat = [expected_value(golden, j, mask, prof) for j in range(3)]
    from mechsim.mechanisms import gdpm_payment

    assert np.array_equal(pay[golden.profile_index(prof)], gdpm_payment(golden_sol, prof, mask, vhat))


def test_empty_allocation_zero_continuation_pays_nothing():
    sol = solve_all(zero_scenario())
    pc, bb = check_pc_bb(sol, gdpm_rule())
    assert pc.passed and bb.passed
    assert all(r.margin == 0.0 for r in pc.rows + bb.rows)


def test_matrix_layout(golden_reports):
    text = summary_matrix([golden_reports["GDPM"], golden_reports["CONST"]])
    lines = text.splitlines()
    assert lines[0].split() == ["EFF", "EPIC", "EPIR", "PC", "BB"]
    assert lines[1].split() == ["GDPM", "✓", "✓", "✓", "×", "×"]
    assert lines[2].split() == ["CONST", "×", "×", "×", "✓", "✓"]


def test_zero_value_scenario_all_pass():
    sol = solve_all(zero_scenario())
    for r in audit(sol, [gdpm_rule(), const_rule(0.3)]):
        assert all(r.verdict_row()), r.rule


def test_audit_is_deterministic(golden_sol):
    a = audit_rule(golden_sol, gdpm_rule())
    b = audit_rule(golden_sol, gdpm_rule())
    assert np.array_equal(a.utilities, b.utilities, equal_nan=True)
    assert np.array_equal(a.payments, b.payments)
    for k in a.verdicts:
        assert a.verdicts[k].rows == b.verdicts[k].rows


def test_random_scenarios_gdpm_incentive_properties():
    for seed in range(6):
        s = random_scenario(200 + seed, shape=(2, 3, 2), delta=0.8)
        r = audit_rule(solve_all(s), gdpm_rule())
        v = r.verdicts
        assert v["EFF"].passed and v["EPIC"].passed and v["EPIR"].passed, seed
