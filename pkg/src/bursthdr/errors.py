"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`SceneIOError` to exit code 2.
"""


class BurstError(Exception):
    """Base class for all package errors."""


class ValidationError(BurstError, ValueError):
    """Input violates a documented precondition or invariant."""


class DimensionError(ValidationError):
    """Image dimensions are incompatible with the requested operation."""


class InsufficientOverlapError(ValidationError):
    """Too few mutually unclipped pixels to estimate an exposure gain."""

    def __init__(self, inlier_fraction: float):
        super().__init__(f"only {inlier_fraction:.2%} of pixels usable for gain estimation")
        self.inlier_fraction = inlier_fraction


class MalformedSceneError(ValidationError):
    """Scene metadata does not describe three exposure trios."""


class TiffFormatError(ValidationError):
    """TIFF file is outside the supported baseline subset.

    ``tag`` carries the numeric id of the offending tag when there is one.
    """

    def __init__(self, message: str, tag: int | None = None):
        if tag is not None:
            message = f"{message} (tag {tag})"
        super().__init__(message)
        self.tag = tag


class SceneIOError(BurstError, OSError):
    """A scene file is missing or unreadable."""


class PipelineError(BurstError):
    """A restore stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.__cause__ = cause


class IncompleteSetError(ValidationError):
    """Prediction and ground-truth sets do not cover the same scene ids."""

    def __init__(self, missing: list[str], extra: list[str]):
        parts = []
        if missing:
            parts.append("missing predictions: " + ", ".join(missing))
        if extra:
            parts.append("predictions without ground truth: " + ", ".join(extra))
        super().__init__("; ".join(parts) or "scene sets differ")
        self.missing = list(missing)
        self.extra = list(extra)
