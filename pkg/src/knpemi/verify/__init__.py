"""Verification: dense assembly oracle, manufactured solutions and invariant checks."""

from .checks import CrossSolverReport, check_electroneutrality, cross_solver_check
from .mms import MmsCase, constant_case, default_case, run_mms, write_rates_csv
from .oracle import OracleSizeError, compare_entrywise, dense_oracle_assemble

__all__ = [
    "CrossSolverReport",
    "MmsCase",
    "OracleSizeError",
    "check_electroneutrality",
    "compare_entrywise",
    "constant_case",
    "cross_solver_check",
    "default_case",
    "dense_oracle_assemble",
    "run_mms",
    "write_rates_csv",
]
