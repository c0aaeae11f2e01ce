"""
Report types: verification outcomes and benchmark results.
Plain containers; trace_io writes them, ui.plots draws them.
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np


@dataclass
class CheckResult:
    """One verification check."""
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class ConvergenceSeries:
    """Errors against grid spacing for a convergence-order plot."""
    name: str
    spacing: np.ndarray
    errors: np.ndarray
    expected_order: float = 2.0

    def observed_order(self) -> float:
        """Least-squares slope of log(error) against log(spacing)."""
        slope, _ = np.polyfit(np.log(self.spacing), np.log(self.errors), 1)
        return float(slope)


@dataclass
class VerificationReport:
    """Per-check results; passes iff every check passes."""
    checks: List[CheckResult] = field(default_factory=list)
    convergence: List[ConvergenceSeries] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def failed_checks(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]


@dataclass
class StiffnessReport:
    """Largest stable steps of both steppers on one scenario."""
    scenario: str
    dt_max: Dict[str, float]
    steps_per_second: Dict[str, float] = field(default_factory=dict)
    required_ratio: float = 1e3

    @property
    def ratio(self) -> float:
        return self.dt_max["semi-analytical"] / self.dt_max["full-numeric"]

    @property
    def passed(self) -> bool:
        return self.ratio >= self.required_ratio
