"""Exception types shared across the package."""


class DomainError(ValueError):
    """A mathematical hypothesis needed by the computation does not hold."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration hit its iteration cap.

    The partial result, including the trace, is kept on ``self.result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class IntegrityError(RuntimeError):
    """A numerical sanity check failed (negative mass, broken ordering)."""


class SearchError(RuntimeError):
    """No admissible parameters were found by a grid search."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
