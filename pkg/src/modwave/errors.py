"""Typed errors raised across the package.

Every failure a caller can act on maps to one of these classes, so the CLI can
translate them into exit codes without string matching.
"""

from __future__ import annotations


class ModwaveError(Exception):
    """Base class for all package errors; keyword arguments are kept as ``payload``."""

    def __init__(self, message: str = "", **payload):
        super().__init__(message)
        self.payload = payload

    def __str__(self) -> str:
        base = super().__str__()
        if not self.payload:
            return base
        extras = ", ".join(f"{k}={v!r}" for k, v in self.payload.items())
        return f"{base} ({extras})"


class InputDomainError(ModwaveError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class UnsupportedOperationError(ModwaveError, NotImplementedError):
    """The operation is not available for this kind of object."""


class DegenerateInputError(ModwaveError, ValueError):
    """The input makes the requested quantity undefined (e.g. a zero denominator)."""


class ContractViolationError(ModwaveError, AssertionError):
    """A documented invariant between inputs does not hold."""


class NumericalError(ModwaveError, ArithmeticError):
    """A numerical procedure failed; ``payload`` carries diagnostics."""
