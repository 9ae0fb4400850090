"""Simulation harness: scenarios, the three-phase runner and campaign reports."""

from .scenario import Scenario, noiseless
from .runner import CaseResult, CaseSim, run_case

__all__ = ["Scenario", "noiseless", "CaseSim", "CaseResult", "run_case"]
