"""Exception hierarchy shared by all modules."""


class IPFPError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(IPFPError, ValueError):
    """Array shapes or lengths do not agree."""


class MeasureError(IPFPError, ValueError):
    """A reference measure is not a full-support probability vector."""


class TrivialSubspaceError(IPFPError, ValueError):
    """A spanning set is numerically null, so the subspace would be {0}."""


class DomainError(IPFPError, ValueError):
    """An argument lies outside the domain of a divergence."""


class ContainmentError(IPFPError, ValueError):
    """One subspace is contained in the other; the angle is undefined."""


class SumNotClosedError(IPFPError, ValueError):
    """The cosine of the angle is (numerically) one, so the sum is not closed."""


class DegenerateInstanceError(IPFPError, ValueError):
    """The sum operator has no singular value above the rank tolerance."""


class InfeasibleError(IPFPError, ValueError):
    """The constraint data admit no feasible measure."""


class SizeError(IPFPError, ValueError):
    """A generated instance would exceed the desk-scale size guard."""


class SchemaError(IPFPError, ValueError):
    """An instance or trace file violates its schema."""


class ConvergenceError(IPFPError, RuntimeError):
    """An iterative method did not reach its tolerance.

    ``residual`` holds the last gradient norm that was observed.
    """

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class UnboundedIteratesError(ConvergenceError):
    """Iterates left the radius guard around the cost."""
