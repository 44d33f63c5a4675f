"""Backend selection for the inner loops.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``NERIMF_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
the backend-agreement tests).
"""
import os

from . import _kernels_py

if os.environ.get("NERIMF_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"



def node_moments(u, alpha, logw):
    """(log S0, S1/S0, S2/S0) per node; a single atom has a closed form, so it skips the kernel."""
    if len(alpha) == 1:
        return _kernels_py.node_moments(u, alpha, logw)
    return _impl.node_moments(u, alpha, logw)

ball_masses = _impl.ball_masses
