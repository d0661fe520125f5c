"""Exception hierarchy with stable process exit codes.

Exit-code contract used by the CLI:

* 0 -- success
* 2 -- configuration / schema error
* 3 -- precondition violation (bad inputs to an operation)
* 4 -- numeric failure (solver breakdown, divergence)
* 5 -- hypothesis violation (required geometric condition fails)
"""

from __future__ import annotations


class FraclabError(Exception):
    """Base class for all laboratory errors."""

    exit_code = 1


class ConfigError(FraclabError):
    """Malformed scenario file, schema violation, or inconsistent settings."""

    exit_code = 2


class PreconditionError(FraclabError):
    """An operation was called with inputs violating its contract."""

    exit_code = 3


class NumericError(FraclabError):
    """A numerical method failed to converge or produced non-finite values."""

    exit_code = 4

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class HypothesisViolation(FraclabError):
    """A geometric hypothesis required by the reconstruction does not hold."""

    exit_code = 5


class SmallnessExceeded(NumericError):
    """Newton iteration failed even after repeated halving of the exterior data."""
