"""Exception and warning types shared across the package.

Every raise in the library uses one of these classes so callers can
distinguish bad inputs (subclasses of :class:`SapflowError`) from numeric
trouble discovered mid-computation, and so the command line tool can map
them onto exit codes.
"""

from __future__ import annotations


class SapflowError(Exception):
    """Base class for all errors raised by this package."""


# --- time series containers and operations ---

class EmptyOverlap(SapflowError):
    """Series passed to ``align`` share no common time span."""


class MixedStep(SapflowError):
    """Series passed to ``align`` have different sampling steps."""


class LagTooLarge(SapflowError):
    """Requested lag meets or exceeds the series length."""


class DegenerateVariance(SapflowError):
    """A correlation window is constant, so the correlation is undefined."""


class NonPositiveScale(SapflowError):
    """Quantile used for normalization is zero or negative."""


class InsufficientData(SapflowError):
    """Not enough usable observations for the requested operation."""


# --- spline bases and penalties ---

class OrderTooLarge(SapflowError):
    """Difference-penalty order is not smaller than the basis size."""


class BadCategory(SapflowError):
    """Category index is outside the declared factor levels."""


class RankDeficient(SapflowError):
    """Constraint construction failed because the block has no usable
    component along the all-ones direction."""


# --- model fitting / prediction ---

class MissingChannel(SapflowError):
    """A covariate or response channel is absent (or entirely missing)."""


class MissingCovariate(SapflowError):
    """A needed covariate value is missing at prediction time."""


class SingularSystem(SapflowError):
    """Penalized normal equations could not be factorized."""


class VersionMismatch(SapflowError):
    """Serialized model was written with an unsupported schema version."""


# --- ensemble machinery ---

class AllZeroWeights(SapflowError):
    """Every combination weight collapsed to zero."""


class ZeroSpread(SapflowError):
    """Ensemble spread is identically zero, so the variance-ratio scale
    is undefined."""


# --- rolling driver ---

class InsufficientHistory(SapflowError):
    """Frame is too short for the configured warm-up and window lengths."""


class ScaleMissing(SapflowError):
    """Cross-season run requires a positive output scale."""


class NoOverlap(SapflowError):
    """Evaluation inputs do not cover the report span."""


# --- predictive ability test ---

class LengthMismatch(SapflowError):
    """Loss series in a panel have unequal lengths."""


class NotWholeDays(SapflowError):
    """Panel length is not a whole number of days."""


# --- changepoint analysis ---

class TooShort(SapflowError):
    """Series is shorter than twice the minimum segment length."""


# --- water use ---

class BadRadii(SapflowError):
    """Sensor ring radii are not strictly increasing and positive."""


class BarkExceedsRadius(SapflowError):
    """Bark depth is at least the stem radius implied by circumference."""


class StepMismatch(SapflowError):
    """Stated integration step does not match the series step."""


# --- configuration / CLI ---

class ConfigError(SapflowError):
    """Base class for configuration problems (maps to exit code 1)."""


class UnknownKey(ConfigError):
    """Config file or flags contain a key the schema does not define."""


class TypeMismatch(ConfigError):
    """Config value has the wrong type for its key."""


class MissingRequired(ConfigError):
    """A required config key is absent."""


# --- warnings ---

class GridExhausted(UserWarning):
    """A smoothing parameter was selected at the edge of its search grid."""


class ZeroMse(UserWarning):
    """A member matched the observations (near) exactly; weights were
    short-circuited to that member."""


class LowDataWarning(UserWarning):
    """Design has fewer than ten complete rows per column; the fit is
    legal but may be unstable."""
