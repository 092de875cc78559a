"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Malformed configuration: bad grid parameters, schema violations, oversized search grids."""


class ValidationError(ValueError):
    """A stated precondition failed: delay out of range, incompatible terminal data, bad orderings."""


class GeneratorEvalError(ValueError):
    """Driver returned a non-finite value. Carries the offending argument tuple."""

    def __init__(self, message: str, arguments: tuple):
        super().__init__(message)
        self.arguments = arguments


class NonConvergenceError(RuntimeError):
    """Fixed-point loop hit its iteration cap. Carries the report and the last iterate."""

    def __init__(self, message: str, report=None, triple=None):
        super().__init__(message)
        self.report = report
        self.triple = triple
