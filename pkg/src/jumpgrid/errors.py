"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class UnsupportedKernelError(NotImplementedError):
    """Requested computation needs a kernel property (e.g. radial symmetry) that is missing."""


class SolverError(RuntimeError):
    """Iterative solve did not reach the requested residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
