"""Exception types shared across the package."""


class SceneMemError(Exception):
    """Base class for all package errors."""


class InputError(SceneMemError, ValueError):
    """Malformed or inconsistent input (dimension mismatch, bad ranges, ...)."""


class DegenerateInputError(InputError):
    """Input is structurally valid but geometrically degenerate
    (too few correspondences, rank-deficient covariance, collinear points)."""


class DuplicateEntryError(InputError):
    """Insertion would violate a uniqueness constraint."""


class AlignmentError(SceneMemError, RuntimeError):
    """An alignment step failed; the target state is left unchanged."""


class StageError(SceneMemError, RuntimeError):
    """A pipeline stage failed. Carries the stage tag for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
