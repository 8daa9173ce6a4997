"""Exception hierarchy shared by all modules."""


class MultisymError(Exception):
    """Base class for library errors."""


class SingularMetric(MultisymError):
    """Metric is not invertible (or its condition number exceeds the cap)."""


class DomainError(MultisymError, ValueError):
    """Query point lies outside the chart domain."""


class ShapeError(MultisymError, ValueError):
    """Array shapes are inconsistent with the grid or jet dimensions."""


class NonRegular(MultisymError):
    """Deformation gradient is degenerate (det F <= floor)."""


class WrongEnergyKind(MultisymError, TypeError):
    """Operation requires a different stored-energy kind."""


class NonDifferentiable(MultisymError):
    """Stored energy does not provide the partial derivatives requested."""


class MissingMultiplier(MultisymError):
    """A Lagrange multiplier was required but not supplied."""


class NewtonDiverged(MultisymError):
    """Newton iteration did not reach tolerance within the iteration cap."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class SingularSaddle(MultisymError):
    """Saddle-point system of the constrained step is rank deficient."""


class ConfigError(MultisymError, ValueError):
    """Scenario configuration is invalid."""
