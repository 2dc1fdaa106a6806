"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid lattice/potential/run configuration."""


class ConvergenceError(RuntimeError):
    """An iterative solve exhausted its budget or failed a line search."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class ValidationError(RuntimeError):
    """A cross-module oracle check failed."""


class NonFiniteEnergyError(RuntimeError):
    """A deformed bond collapsed below the bond-length floor."""
