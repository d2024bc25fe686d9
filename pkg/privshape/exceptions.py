"""Exception hierarchy for privshape."""

from typing import Optional


class PrivShapeError(Exception):
    """Base class for all privshape errors."""


class BinRangeError(PrivShapeError):
    """A value fell outside a binning range."""

    def __init__(self, value: float, step: Optional[int], low: float, high: float):
        self.value = value
        self.step = step
        self.low = low
        self.high = high
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"Value {value!r}{where} outside bin range [{low}, {high}]")


class ProfileError(PrivShapeError):
    """Invalid load or weather profile."""


class ColdStartError(PrivShapeError):
    """History window shorter than the configured length."""

    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(
            f"History holds {available} samples, {required} required; seed the window first"
        )


class InfeasibleAssignmentError(PrivShapeError):
    """Bin-indicator assignment violates the simplex or zero-row constraints."""


class DeviceModelError(PrivShapeError):
    """Inconsistent device parameters or non-finite device inputs."""


class NonConvexProgramError(PrivShapeError):
    """Quadratic objective is not positive semidefinite."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"Objective matrix is not PSD (min eigenvalue {min_eigenvalue:.3e})")


class IngestError(PrivShapeError):
    """CSV input problem, located by path and line number."""

    def __init__(self, path: str, line: Optional[int], reason: str):
        self.path = path
        self.line = line
        self.reason = reason
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {reason}")


class ScenarioError(PrivShapeError):
    """Invalid scenario configuration content."""
