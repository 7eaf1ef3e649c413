"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``DLMAC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py as python_impl

compiled_impl = None
if os.environ.get("DLMAC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_impl  # type: ignore[no-redef]
    except ImportError:
        compiled_impl = None

impl = compiled_impl if compiled_impl is not None else python_impl
BACKEND = "compiled" if compiled_impl is not None else "python"

gopt_decide = impl.gopt_decide
gopt_next = impl.gopt_next
csma_scan = impl.csma_scan
