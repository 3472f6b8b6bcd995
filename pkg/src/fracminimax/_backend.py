"""Kernel backend selection.

The hot loops in :mod:`fracminimax.kernels` exist twice: once as numba
``@njit`` functions and once as vectorised numpy code.  The environment
variable ``FRACMINIMAX_BACKEND`` picks one of them at import time:

* ``numba`` (default when numba imports cleanly)
* ``numpy``

:func:`use_backend` switches at runtime, which the benchmark and the
backend-equivalence tests rely on.
"""

import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator


ENV_FLAG = "FRACMINIMAX_BACKEND"
_VALID = ("numba", "numpy")


def njit(*args, **kwargs):
    kwargs.setdefault("cache", False)
    return _njit(*args, **kwargs)


def _initial_backend():
    requested = os.environ.get(ENV_FLAG, "").strip().lower()
    if requested and requested not in _VALID:
        raise ValueError(f"{ENV_FLAG} must be one of {_VALID}, got {requested!r}")
    if requested == "numpy" or not HAVE_NUMBA:
        return "numpy"
    return "numba"


_state = {"backend": _initial_backend()}


def backend():
    """Name of the active kernel backend."""
    return _state["backend"]


def use_backend(name):
    """Switch the active backend; returns the previous one."""
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    previous = _state["backend"]
    _state["backend"] = name
    return previous
