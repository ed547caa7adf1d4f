"""Simulation and limit computation for sequential allocation designs."""

from .core import AllocationState, AssignmentRecord, TrialHistory
from .downcrossing import find_downcrossing, find_vectorial_downcrossing, verify_downcrossing
from .sim import TrialConfig, convergence_report, run_replications, run_trial, theoretical_limit

__all__ = [
    "AllocationState",
    "AssignmentRecord",
    "TrialHistory",
    "TrialConfig",
    "convergence_report",
    "find_downcrossing",
    "find_vectorial_downcrossing",
    "run_replications",
    "run_trial",
    "theoretical_limit",
    "verify_downcrossing",
]
