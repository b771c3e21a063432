"""Shared exception types."""


class InvariantViolation(RuntimeError):
    """A structural invariant that should hold by construction was violated."""


class OracleError(ValueError):
    """A pluggable oracle returned answers inconsistent with its contract."""


class ResolutionExhausted(RuntimeError):
    """A finite net cannot certify a bound at the requested scale."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class ResourceLimitError(RuntimeError):
    """A configured depth/trial/size limit was exceeded."""
