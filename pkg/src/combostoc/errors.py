"""Exception types shared across the package."""


class CombostocError(Exception):
    """Base class for all package-specific errors."""


class IncompatibleShapes(CombostocError):
    """Two shapes cannot be broadcast against each other."""


class ShapeMismatch(CombostocError):
    """Model inputs are inconsistent with the configured data layout."""


class DegeneratePair(CombostocError):
    """Source and target coincide; the diagonal direction is undefined."""


class SchedulerAtOne(CombostocError):
    """All timestep entries already at 1; cone velocity is undefined."""


class SingularEvaluation(CombostocError):
    """Density integrand is singular at the requested point."""


class EmptyGrid(CombostocError):
    """No Monte-Carlo deposit landed in any grid cell."""


class NegativeStep(CombostocError):
    """Integrator asked to step backwards in time."""


class NonFiniteLoss(CombostocError):
    """Training loss became NaN/Inf; carries a diagnostic batch dump."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class UnknownKind(CombostocError):
    """Unrecognized dataset kind."""


class MissingCheckpoint(CombostocError):
    """A sampling command was run without a usable checkpoint."""
