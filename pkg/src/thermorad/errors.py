"""Exception taxonomy shared by all solver and pipeline stages."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class DomainError(ValidationError):
    """A point lies outside the geometric domain it must belong to."""


class CoverageError(ValidationError):
    """Stored measurement data does not cover a required (beta, dir) location."""

    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = list(gaps) if gaps is not None else []


class SolverError(RuntimeError):
    """A linear solve failed to reach its residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IterationError(RuntimeError):
    """Fixed-point iteration failed to converge within the iteration cap."""

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = list(ratios) if ratios is not None else []


class PositivityError(RuntimeError):
    """A reconstructed quantity violates the positivity floor it must satisfy."""


class StageError(RuntimeError):
    """Pipeline stage failure; carries the stage tag and the original cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
