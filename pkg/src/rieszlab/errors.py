"""Exception hierarchy shared by all modules."""


class RieszLabError(Exception):
    """Base class for all library errors."""


class BoundsError(RieszLabError, ValueError):
    """A shape does not fit inside the grid box."""


class DomainError(RieszLabError, ValueError):
    """An argument is outside its admissible range."""


class SpecMismatchError(RieszLabError, ValueError):
    """Two domains live on different grids."""


class ResolutionError(RieszLabError, ValueError):
    """A length scale is too small for the grid spacing."""


class ConstructionError(RieszLabError, ValueError):
    """A constructor received geometrically inconsistent parameters."""


class PreconditionError(RieszLabError, ValueError):
    """An operation was called on an input it does not support."""


class RegularityError(RieszLabError, ValueError):
    """The requested quantity is not defined for this exponent."""


class DegenerateError(RieszLabError, ValueError):
    """The construction collapses to a trivial case."""


class InsufficientBoundaryError(RieszLabError, ValueError):
    """Too few usable boundary samples."""


class FormatError(RieszLabError, ValueError):
    """Malformed serialized document; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SolverError(RieszLabError, RuntimeError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), index=None):
        super().__init__(message)
        self.residual = residual
        self.index = index
