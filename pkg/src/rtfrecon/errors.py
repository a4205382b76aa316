"""Error hierarchy shared across the package.

The CLI maps these onto process exit codes: invalid arguments or
configuration raise ValueError (exit 2), broken or missing data artifacts
raise DataError (exit 3), and numerical failures raise NumericalError
(exit 4).
"""


class DataError(Exception):
    """A data artifact is missing, truncated, or internally inconsistent."""


class NumericalError(Exception):
    """A computation failed numerically (singular system, non-finite values)."""


class ModeBudgetError(ValueError):
    """Mode enumeration would exceed the configured mode-count cap."""
