"""Exception types raised across the package."""


class GmnetError(Exception):
    """Base class for all package errors."""


class IngestionError(GmnetError, ValueError):
    """A record or registry file could not be turned into a tensor."""


class ValidationError(GmnetError, ValueError):
    """Input violates a data invariant (negative or non-finite values, bad shape)."""


class DegenerateInputError(GmnetError, ValueError):
    """Input is structurally valid but carries no usable mass (e.g. V = 0)."""


class ConvergenceError(GmnetError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LinearityError(GmnetError, RuntimeError):
    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class SpectralError(GmnetError, RuntimeError):
    pass


class PipelineError(GmnetError, RuntimeError):
    """A pipeline stage failed; ``manifest`` lists what was produced before it."""

    def __init__(self, stage, cause, manifest=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest or {}
