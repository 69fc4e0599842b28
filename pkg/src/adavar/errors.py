"""Exception hierarchy. The CLI maps ConfigError to exit code 2 and the rest to 3."""


class AdavarError(Exception):
    pass


class ConfigError(AdavarError, ValueError):
    """Invalid parameters, detected before any computation starts."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DomainError(AdavarError, ValueError):
    """Non-finite or otherwise unusable input point."""


class ValidityError(AdavarError, ValueError):
    """A weight generator that is not strictly positive on the energy range."""


class NumericalError(AdavarError, ArithmeticError):
    """Non-finite state produced during integration."""

    def __init__(self, message, particle=None):
        super().__init__(message)
        self.particle = particle


class StructureError(AdavarError):
    """The potential lacks the minimum/saddle structure an estimate needs."""


class EstimationError(AdavarError):
    """A Monte Carlo estimate could not be formed."""


class FitError(AdavarError):
    """Too few usable points for a decay-rate fit."""


class MeshMismatchError(AdavarError, ValueError):
    """Two grid objects were built on different meshes."""
