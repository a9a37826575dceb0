"""Exception hierarchy shared by all modules."""


class KtddlError(Exception):
    """Base class for package errors."""


class InvalidInputError(KtddlError, ValueError):
    """Arguments violate a documented precondition."""


class ConfigError(KtddlError, ValueError):
    """A run configuration is malformed or inconsistent."""


class DataError(KtddlError):
    """Base class for failures while reading data files."""


class MalformedHeaderError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class NaNPayloadError(DataError):
    pass


class NumericalError(KtddlError, ArithmeticError):
    """Base class for numerical failures."""


class ConvergenceError(NumericalError):
    """The sparse coding solver did not reach its KKT tolerance.

    The last iterate and its residual are kept for inspection.
    """

    def __init__(self, message, last_iterate=None, kkt_residual=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.kkt_residual = kkt_residual
        self.iterations = iterations


class NotPositiveDefiniteError(NumericalError):
    """Cholesky factorization of the implicit-gradient system failed."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class TrainingError(KtddlError):
    """Wraps a failure inside the SGD loop with the iteration index attached."""

    def __init__(self, message, iteration, stage="task-driven"):
        super().__init__(message)
        self.iteration = iteration
        self.stage = stage
