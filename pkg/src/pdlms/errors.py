"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array or matrix shapes do not agree."""


class InvalidConfigError(ValueError):
    """A configuration value violates a precondition."""


class UnstableError(RuntimeError):
    """The mean-square recursion is not contractive, so no steady state exists."""


class SingularSystemError(RuntimeError):
    """The steady-state linear system could not be solved."""


class DivergenceError(RuntimeError):
    """A trial produced non-finite estimates.

    Attributes
    ----------
    iteration : int
        First iteration at which a non-finite value appeared.
    partial : ndarray or None
        Squared-deviation record up to (excluding) ``iteration``.
    """

    def __init__(self, iteration, partial=None, message=None):
        self.iteration = iteration
        self.partial = partial
        super().__init__(message or f"non-finite estimate at iteration {iteration}")
