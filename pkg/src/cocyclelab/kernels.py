"""Kernel selection.

The compiled kernel is used when importable; set ``COCYCLELAB_PURE_PYTHON=1``
to force the pure-Python fallback.  Both expose ``integrate``,
``integrate_events``, ``lyapunov_flow`` and ``qr`` with identical semantics.
"""

import os

from . import _kernel_py

OK, STEP_FAILURE, DIVERGENCE, TIMEOUT, NONFINITE = (
    _kernel_py.OK,
    _kernel_py.STEP_FAILURE,
    _kernel_py.DIVERGENCE,
    _kernel_py.TIMEOUT,
    _kernel_py.NONFINITE,
)

_compiled = None
if not os.environ.get("COCYCLELAB_PURE_PYTHON"):
    try:
        from . import _kernel as _compiled
    except ImportError:
        _compiled = None

backend = _compiled if _compiled is not None else _kernel_py
BACKEND_NAME = "compiled" if _compiled is not None else "python"


def get_backend(name=None):
    """Return a kernel module by name (``"compiled"``, ``"python"`` or None for default)."""
    if name is None:
        return backend
    if name == "python":
        return _kernel_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel is not available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
