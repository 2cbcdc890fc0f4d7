"""Exception hierarchy.

Everything raised on purpose by the package derives from ``RegTylerError`` so
callers (and the CLI) can separate domain failures from programming errors.
"""


class RegTylerError(Exception):
    """Base class for domain errors raised by regtyler."""


class DefinitenessError(RegTylerError, ValueError):
    """A matrix that must be positive (semi)definite is not."""


class DomainError(RegTylerError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateSampleError(RegTylerError, ValueError):
    """The sample set is empty or contains a zero-norm row where none is allowed."""


class CapacityError(RegTylerError):
    """Exact subspace enumeration would exceed the configured subset budget."""


class InnerSolveFailed(RegTylerError):
    """A convex inner solve could not make progress (line search stalled)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoFeasiblePointError(RegTylerError):
    """Every point of a tuning grid was infeasible or diverged."""


class PriceParseError(RegTylerError, ValueError):
    """A price file could not be parsed; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class OrderingError(RegTylerError, ValueError):
    """Dates in a price file are not strictly increasing."""
