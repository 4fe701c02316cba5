"""Simulator and property auditor for a two-stage dynamic pivot mechanism."""

from mechsim.audit import audit, deviation_utility, summary_matrix
from mechsim.mechanisms import const_payment, const_rule, gdpm_payment, gdpm_rule, run_round
from mechsim.model import Scenario, enumerate_profiles, expected_value, validate_scenario
from mechsim.scenario_io import load_scenario
from mechsim.sim import golden_scenario, monte_carlo_utility, run_episode
from mechsim.welfare import efficient_allocation, solve_all, solve_welfare

__all__ = [
    "Scenario",
    "audit",
    "const_payment",
    "const_rule",
    "deviation_utility",
    "efficient_allocation",
    "enumerate_profiles",
    "expected_value",
    "gdpm_payment",
    "gdpm_rule",
    "golden_scenario",
    "load_scenario",
    "monte_carlo_utility",
    "run_episode",
    "run_round",
    "solve_all",
    "solve_welfare",
    "summary_matrix",
    "validate_scenario",
]
