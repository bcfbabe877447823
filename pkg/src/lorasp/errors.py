"""Exception types raised by the solver."""


class SolverError(Exception):
    """Base class for all errors raised by :mod:`lorasp`."""


class InvalidPartitionError(SolverError, ValueError):
    """A cluster partition does not cover the index set exactly once."""


class DepthTooLargeError(SolverError, ValueError):
    """Requested tree depth needs more leaves than there are unknowns."""


class StructureError(SolverError):
    """Inconsistent hierarchy structure (e.g. odd red-node count)."""


class NotSPDError(SolverError, ArithmeticError):
    """A pivot block failed its Cholesky factorization.

    ``where`` names the node (level and id) whose block was rejected.
    """

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} at {where}")
        self.where = where


class ResourceError(SolverError, MemoryError):
    """Rank growth exceeded the configured memory cap."""


class MatrixMarketError(SolverError, ValueError):
    """Malformed MatrixMarket input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnsupportedError(SolverError, ValueError):
    """Requested operation is outside the supported problem class."""
