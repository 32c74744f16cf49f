"""Kernel backend selection.

Hot loops ship twice: a numba ``@njit`` version and a vectorised numpy
version.  The numba path is used when numba imports cleanly and the
environment variable ``ASYNCFIELD_DISABLE_NUMBA`` is unset (or ``0``).
"""
import os

_flag = os.environ.get("ASYNCFIELD_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError("numba disabled by ASYNCFIELD_DISABLE_NUMBA")
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
