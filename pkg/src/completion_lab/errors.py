"""Typed failures shared by the core package, the service, and the CLI.

Every error carries a ``category`` that the CLI maps to an exit code:
``usage`` -> 1, ``validation`` -> 2, ``work_cap`` -> 3.
"""

from __future__ import annotations

EXIT_CODES = {"usage": 1, "validation": 2, "work_cap": 3}


class LabError(Exception):
    """Base class for all typed failures raised by the lab."""

    category = "validation"


class UsageError(LabError):
    """Bad arguments, malformed configuration, or an unsupported combination."""

    category = "usage"


class ModelValidationError(LabError):
    """A source model or channel failed its invariant checks."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations or [])


class NumericalError(LabError):
    """An iterative numeric procedure failed (non-convergence, empty result)."""


class DegenerateSourceError(NumericalError):
    """Zero joint entropy: every entry is known a priori, capacity unbounded."""


class CapacityZeroError(NumericalError):
    """The observation channel carries no information; no rate is achievable."""


class TransitionOutsideGrid(NumericalError):
    """The empirical error curve never crosses 1/2 inside the sweep grid."""

    def __init__(self, direction: str):
        super().__init__(f"transition outside grid ({direction})")
        self.direction = direction


class WorkCapExceeded(LabError):
    """An exact enumeration would exceed the configured work cap.

    The lab refuses rather than silently truncating; ``estimate`` says how
    much work the request would have needed, in the cap's own unit.
    """

    category = "work_cap"

    def __init__(self, message: str, estimate: float, cap: float):
        super().__init__(f"{message}: estimated work {estimate:g} exceeds cap {cap:g}")
        self.estimate = estimate
        self.cap = cap
