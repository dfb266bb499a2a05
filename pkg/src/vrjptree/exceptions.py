"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A quadrature, root-finder or optimizer failed to converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class UsageError(ValueError):
    """Invalid call: unknown vertex, incompatible record kind, bad config."""
