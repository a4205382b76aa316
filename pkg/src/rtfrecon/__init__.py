"""Room transfer function simulation and sparse-grid sound field reconstruction."""

__version__ = "0.1.0"

from .errors import DataError, ModeBudgetError, NumericalError

# modal (and numpy with it) loads on first attribute access, so the CLI can
# pin BLAS thread counts via environment variables before numpy initializes.
_MODAL_NAMES = (
    "FieldGrid",
    "Mode",
    "RoomSpec",
    "enumerate_modes",
    "rtf",
    "synthesize_field",
)

__all__ = [
    "DataError",
    "ModeBudgetError",
    "NumericalError",
    "__version__",
    *_MODAL_NAMES,
]


def __getattr__(name: str):
    if name in _MODAL_NAMES:
        from . import modal

        return getattr(modal, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
