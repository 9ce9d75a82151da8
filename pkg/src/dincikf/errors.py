"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Input outside an operation's domain (bad shape, non-positive step...)."""


class NumericalSingularity(ArithmeticError):
    """A matrix that must be positive definite failed to factorize."""


class NearSingularLogarithm(ArithmeticError):
    """Rotation angle too close to pi for a stable logarithm."""


class PreconditionViolation(RuntimeError):
    """An operation was called on input that fails a structural requirement."""


class ConfigError(ValueError):
    """Scenario configuration is invalid.

    ``path`` names the offending field, e.g. ``noise[2].sigma_g``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
