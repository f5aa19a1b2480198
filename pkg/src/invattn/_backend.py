"""Kernel backend selection.

The hot inner loops in :mod:`invattn.kernels` exist twice: a vectorized
pure-numpy version and an explicit-loop version compiled with numba. The
environment variable ``INVATTN_NUMBA`` picks the default dispatch:

* unset / ``auto`` / ``1`` — numba loops when numba imports, numpy otherwise
* ``0`` / ``false`` / ``off`` — always the numpy path

The loop functions are decorated with the real ``@njit`` whenever numba is
importable (compilation is lazy, so merely decorating costs nothing); the
flag only controls which side the library calls by default. Benchmarks may
therefore time both paths in one process regardless of the flag.
"""

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def _flag_enabled() -> bool:
    raw = os.environ.get("INVATTN_NUMBA", "auto").strip().lower()
    if raw in ("0", "false", "off", "no"):
        return False
    if raw in ("", "auto", "1", "true", "on", "yes"):
        return True
    raise ValueError(f"unrecognized INVATTN_NUMBA value: {raw!r}")


NUMBA_ENABLED = HAVE_NUMBA and _flag_enabled()
