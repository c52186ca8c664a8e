"""Exception types raised across the package."""


class MetapopError(Exception):
    """Base class for all package errors."""


class NotIrreducible(MetapopError):
    pass


class ZeroMassState(MetapopError):
    pass


class MissingDual(MetapopError):
    pass


class UnsupportedDimension(MetapopError):
    pass


class NotPhaseStructured(MetapopError):
    pass


class SupSurvivalOne(MetapopError):
    pass


class MaxIterExceeded(MetapopError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NoConvergence(MaxIterExceeded):
    pass


class AssumptionViolated(MetapopError):
    def __init__(self, assumption, message):
        super().__init__(f"assumption ({assumption}) violated: {message}")
        self.assumption = assumption


class ConfigError(MetapopError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
