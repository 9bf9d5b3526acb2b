"""Select the kernel backend at import time.

The compiled extension is preferred. Setting ``NWSKETCH_PURE_PYTHON=1``
forces the numpy fallback, which is also used when the extension was not
built.
"""
import os

from nwsketch import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if not os.environ.get("NWSKETCH_PURE_PYTHON"):
    try:
        from nwsketch import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def available_backends():
    """Return ``{name: module}`` for every kernel backend importable here."""
    out = {"python": _kernels_py}
    try:
        from nwsketch import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out
