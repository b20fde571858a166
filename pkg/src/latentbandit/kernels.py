"""Backend selection for the hot scoring kernels.

The compiled extension is used when it imports; otherwise the numpy
implementations are used. Set ``LATENTBANDIT_BACKEND=python`` to force the
fallback (useful for benchmarking and for checking the two agree).
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("LATENTBANDIT_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

linear_explore = _impl.linear_explore
mc_explore = _impl.mc_explore
future_loss_matrix = _impl.future_loss_matrix


def available_backends():
    """Map of backend name to kernel module for every backend that imports."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
