"""Genetic programming with exact dimension repair for outpatient
appointment rules."""

from .clinic import ClinicConfig, clinic_grid, get_clinic
from .engine import EngineConfig, run
from .estimator import DimensionAwareScheduler, DimensionRepairer, check_clinic
from .experiments import evaluate_rule_on_test, run_suite
from .repair import repair_individual, repair_tree, solve
from .tree import Individual, format_individual, parse_individual, parse_tree

__all__ = [
    "ClinicConfig",
    "DimensionAwareScheduler",
    "DimensionRepairer",
    "EngineConfig",
    "Individual",
    "check_clinic",
    "clinic_grid",
    "evaluate_rule_on_test",
    "format_individual",
    "get_clinic",
    "parse_individual",
    "parse_tree",
    "repair_individual",
    "repair_tree",
    "run",
    "run_suite",
    "solve",
]

__version__ = "0.1.0"
