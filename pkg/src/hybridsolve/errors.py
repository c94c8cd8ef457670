"""Exception types raised across the package."""


class HybridSolveError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(HybridSolveError, ValueError):
    pass


class SingularBlock(HybridSolveError, ArithmeticError):
    """A dense block has a pivot below the singularity threshold."""


class CapExceeded(HybridSolveError, MemoryError):
    """A dense expansion would exceed the configured entry cap."""


class FormatError(HybridSolveError, ValueError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ValidationError(HybridSolveError, ValueError):
    """Inputs violate a structural invariant (e.g. C P != 0)."""


class IndefinitePreconditioner(HybridSolveError, ArithmeticError):
    pass


class ZeroDiagonal(HybridSolveError, ValueError):
    pass


class SetupFailed(HybridSolveError, RuntimeError):
    pass


class NotSymmetric(HybridSolveError, ValueError):
    pass


class NotConverged(HybridSolveError, RuntimeError):
    """PCG stopped at maxit above the requested tolerance."""
