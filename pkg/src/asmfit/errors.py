"""Exception types shared across the package."""


class AsmError(Exception):
    """Base class for all errors raised by this package."""


class SpecSyntaxError(AsmError):
    """Model-spec source could not be parsed.

    Carries a 1-based line/column so callers can render
    ``file:line:col: message`` diagnostics.
    """

    def __init__(self, message, line, col, filename=None):
        self.message = message
        self.line = line
        self.col = col
        self.filename = filename
        super().__init__(self.render())

    def render(self):
        prefix = self.filename if self.filename else "<spec>"
        return f"{prefix}:{self.line}:{self.col}: {self.message}"


class ConstraintConflictError(AsmError):
    """A user-fixed value contradicts another fix inside one equality class."""


class IngestionError(AsmError):
    """Data file could not be loaded or is inadequate (CLI exit code 2)."""


class UnderIdentifiedError(AsmError):
    """Free parameters meet or exceed the available sample moments (exit code 3)."""


class NonPositiveDefiniteError(AsmError):
    """A matrix that must be positive definite is not (sample covariance, Hessian)."""
