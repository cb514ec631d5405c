"""Exception types raised across the package.

All of them derive from built-in exceptions so callers that only know about
``ValueError``/``RuntimeError`` keep working.
"""

from __future__ import annotations

from typing import Any, Optional


class ParameterError(ValueError):
    """Physical or abstraction parameters violate their invariants."""


class ConfigError(ValueError):
    """Scenario configuration is unreadable or inconsistent."""


class ContractViolation(ValueError):
    """An operation was called outside its pre-conditions."""


class NumericalError(ArithmeticError):
    """A linear solve failed (singular system matrix)."""


class ArtifactMismatch(ValueError):
    """A stored model/controller does not match the current configuration."""


class MemoryBudgetExceeded(MemoryError):
    """The requested abstraction does not fit the configured memory budget."""


class GuaranteeViolation(RuntimeError):
    """The plant left the winning set of the controller that is driving it.

    ``trace`` is filled in by the simulator with the samples recorded up to
    the failing step so callers can still write artifacts.
    """

    def __init__(self, message: str, *, cell: int, controller: str) -> None:
        super().__init__(message)
        self.cell = cell
        self.controller = controller
        self.trace: Optional[Any] = None


__all__ = [
    "ArtifactMismatch",
    "ConfigError",
    "ContractViolation",
    "GuaranteeViolation",
    "MemoryBudgetExceeded",
    "NumericalError",
    "ParameterError",
]
