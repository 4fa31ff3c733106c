"""
Exception hierarchy for the multi-camera planner.
Each error maps to a CLI exit code and may carry module / cycle context.
"""

from typing import Optional


class PlannerError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code = 1

    def __init__(self, message: str, module: Optional[str] = None, cycle: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.module = module
        self.cycle = cycle

    def with_context(self, module: Optional[str] = None, cycle: Optional[int] = None) -> "PlannerError":
        """Attach module / cycle context without losing what is already set"""
        if module is not None and self.module is None:
            self.module = module
        if cycle is not None and self.cycle is None:
            self.cycle = cycle
        return self

    def __str__(self) -> str:
        prefix = []
        if self.module:
            prefix.append(f"[{self.module}]")
        if self.cycle is not None:
            prefix.append(f"[cycle {self.cycle}]")
        return " ".join(prefix + [self.message])


class ConfigurationError(PlannerError):
    exit_code = 2


class DegeneratePoseError(ConfigurationError):
    """Camera position coincides with the actor position."""


class RangeError(ConfigurationError):
    """Time query outside a script or trajectory."""


class NumericError(PlannerError):
    exit_code = 3


class SizeLimitError(PlannerError):
    exit_code = 4
