"""Hot-loop backend selection.

The Cython extension is used when it has been built; otherwise, or when
``AFE_SIM_PURE=1`` is set, the pure-Python implementation is used.
"""

import os

from . import _kernels_py

BACKEND = "python"
run_visits = _kernels_py.run_visits

if os.environ.get("AFE_SIM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not compiled
        pass
    else:
        run_visits = _ext.run_visits
        BACKEND = "cython"


def backends() -> dict:
    """Every importable backend, keyed by name."""
    found = {"python": _kernels_py.run_visits}
    try:
        from . import _kernels as _ext
    except ImportError:
        return found
    found["cython"] = _ext.run_visits
    return found
