"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class WvsslError(Exception):
    """Base class for all package errors."""


class ConfigError(WvsslError):
    """Invalid configuration or usage: bad parameter bounds, unknown options."""


class DataError(WvsslError):
    """Invalid input data: malformed files, bad shapes, out-of-domain values."""


class NumericError(WvsslError):
    """Numerical or training failure: non-finite losses, degenerate inputs."""


class DegenerateImageError(NumericError):
    """Raised when intensity normalization meets a constant image (P99 == P01)."""


class TrainingError(NumericError):
    """Raised when a training step produces a non-finite loss or gradient."""


class UndefinedMetricError(NumericError):
    """Raised when a metric has no defined value (e.g. single-class AUROC pool)."""
