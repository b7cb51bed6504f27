"""Selects the implementation used for the hot numeric kernels.

The numba kernels are used when numba imports cleanly, unless the environment
variable ``RISKMMD_DISABLE_NUMBA`` is set to a truthy value, in which case the
vectorized numpy kernels are used instead. Both modules expose the same
function names and signatures.
"""

import os

_FALSY = ("", "0", "false", "no", "off")


def numba_requested():
    return os.environ.get("RISKMMD_DISABLE_NUMBA", "0").strip().lower() in _FALSY


def _load():
    if numba_requested():
        try:
            from . import _kernels_numba as mod
            return mod, "numba"
        except ImportError:  # pragma: no cover - numba missing
            pass
    from . import _kernels_numpy as mod
    return mod, "numpy"


kernels, BACKEND = _load()
