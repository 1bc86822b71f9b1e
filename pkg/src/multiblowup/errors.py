"""Exception hierarchy shared by all modules."""


class MultiBlowupError(Exception):
    """Base class for package errors."""


class ShootingError(MultiBlowupError):
    """A shooting bisection failed to bracket or to converge."""


class ResolutionError(MultiBlowupError):
    """A grid or step size is too coarse for the requested accuracy."""


class ConvergenceError(MultiBlowupError):
    """An iterative solve (Newton, search) did not converge."""


class RegimeError(MultiBlowupError):
    """A trajectory left the modulated regime (tracking failure)."""


class ConfigError(MultiBlowupError):
    """Invalid configuration or precondition violation."""
