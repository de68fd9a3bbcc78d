"""Exception types shared across the package."""

from __future__ import annotations


class AffineLiborError(Exception):
    """Base class for all errors raised by this package."""


class DomainViolationError(AffineLiborError):
    """A Riccati flow left the admissible region (numerical blow-up).

    Carries the time at which the solution exceeded the configured
    magnitude bound, which brackets the true explosion time from below.
    """

    def __init__(self, message: str, blow_up_time: float | None = None):
        super().__init__(message)
        self.blow_up_time = blow_up_time


class FittingError(AffineLiborError):
    """Calibration targets could not be met (unreachable, inconsistent,
    or violating a model precondition such as the spread ordering)."""


class ScenarioError(AffineLiborError):
    """A scenario file is missing, malformed, or internally inconsistent."""


class UnsupportedCombinationError(AffineLiborError):
    """A valid pair of features that this implementation does not combine,
    e.g. exact transition sampling together with a time-dependent drift
    modifier, or a forward Monte Carlo estimator on a nonlinear CSA."""


class ComparisonError(AffineLiborError):
    """An interpolator comparison was requested on insufficient inputs."""


class StageError(AffineLiborError):
    """A pipeline stage failed; partial outputs have been removed.

    Carries the stage name so command-line users see where the run died.
    """

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
