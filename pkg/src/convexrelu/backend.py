"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set ``CONVEXRELU_BACKEND=python`` (or ``cython``) to force a choice; forcing
``cython`` raises if the extension was not built.
"""

from __future__ import annotations

import os

from . import _kernels_py

_forced = os.environ.get("CONVEXRELU_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _kernels_py
elif _forced == "cython":
    from . import _kernels as _impl  # ImportError here means the ext is missing
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

predict = _impl.predict
smooth_value = _impl.smooth_value
smooth_grad = _impl.smooth_grad
project_rows = _impl.project_rows


def backend_name() -> str:
    """Name of the active kernel backend ("cython" or "python")."""
    return _impl.BACKEND_NAME


def available_backends() -> dict:
    """Map backend name -> kernel module, for benchmarking and parity tests."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
