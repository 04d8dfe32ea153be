"""Exception types raised across the package."""
from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """A local iterative solve did not converge.

    ``diagnostics`` carries whatever the failing solver knew (iteration
    count, last residual, offending point indices).
    """

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class MeshGenerationError(RuntimeError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, **diagnostics):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics


class TrainingError(RuntimeError):
    pass


class OptimizationError(RuntimeError):
    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class PosteriorError(RuntimeError):
    def __init__(self, message: str, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class EigError(RuntimeError):
    pass


class SelectionError(RuntimeError):
    pass
