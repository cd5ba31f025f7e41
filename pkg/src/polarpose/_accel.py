"""Backend selection for the hot loops.

``POLARPOSE_BACKEND=numpy`` forces the pure-numpy paths; the default is
``numba`` when it can be imported.
"""
import contextlib
import logging
import os

logger = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("POLARPOSE_BACKEND", "").strip().lower()
    if requested and requested not in _VALID:
        logger.warning("ignoring unknown POLARPOSE_BACKEND=%r", requested)
        requested = ""
    if requested == "numpy":
        return "numpy"
    if not HAVE_NUMBA:
        if requested == "numba":
            logger.warning("numba requested but not importable; using numpy")
        return "numpy"
    return "numba"


_backend = _initial_backend()


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}; expected one of {_VALID}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)
