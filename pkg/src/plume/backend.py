"""Kernel backend selection.

Hot numerical kernels exist in two implementations with identical call
signatures: a numba @njit version and a pure-numpy fallback.  The active
backend is chosen once at import time from the PLUME_BACKEND environment
variable ("numba" or "numpy").  Default is numba when importable.
"""

import os
import warnings

_ENV_VAR = "PLUME_BACKEND"
_VALID = ("numba", "numpy")


def select_backend() -> str:
    """Return the backend name requested by the environment."""
    choice = os.environ.get(_ENV_VAR, "numba").strip().lower()
    if choice not in _VALID:
        raise ValueError(
            f"{_ENV_VAR}={choice!r} not understood; expected one of {_VALID}"
        )
    if choice == "numba":
        try:
            import numba  # noqa: F401
        except ImportError:
            warnings.warn(
                "numba not importable; falling back to the numpy backend",
                RuntimeWarning,
                stacklevel=2,
            )
            return "numpy"
    return choice


BACKEND = select_backend()
