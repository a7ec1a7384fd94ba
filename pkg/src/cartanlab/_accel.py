"""Numba switch.

Kernels in :mod:`cartanlab.kernels` come in pairs: a pure-numpy version and
an ``@njit`` version. ``CARTANLAB_NUMBA=0`` (or a missing numba) selects the
numpy path. The flag is read once at import time.
"""

import os

_flag = os.environ.get("CARTANLAB_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError
    import numba

    njit = numba.njit
    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = HAVE_NUMBA


def backend():
    return "numba" if USE_NUMBA else "numpy"
