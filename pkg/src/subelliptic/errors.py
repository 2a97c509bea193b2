"""Exception types shared across the package."""


class SubellipticError(Exception):
    """Base class for all package errors."""


class DomainError(SubellipticError):
    """A point (or a flow) left the configured domain box."""


class DimensionMismatchError(SubellipticError):
    """Vector fields or points with incompatible dimensions."""


class PoleError(SubellipticError):
    """A kernel was evaluated at its singularity."""


class ConvergenceError(SubellipticError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class PatchTooLargeError(SubellipticError):
    """The kernel series does not contract on the requested patch."""


class ConfigError(SubellipticError):
    """Malformed run configuration."""
