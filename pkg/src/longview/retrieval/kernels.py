"""Kernel backend selection: compiled extension when importable,
pure Python otherwise. ``LONGVIEW_PURE_PYTHON=1`` forces the fallback,
which is how the benchmark gets a same-process baseline.
"""

from __future__ import annotations

import os

if os.environ.get("LONGVIEW_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _kernels_py as _impl  # type: ignore[no-redef]

KERNEL_BACKEND: str = _impl.BACKEND
bm25_accumulate = _impl.bm25_accumulate
rrf_accumulate = _impl.rrf_accumulate


def load_backend(name: str):
    """Explicit backend lookup; used by tests and the kernel benchmark."""
    if name == "python":
        from . import _kernels_py

        return _kernels_py
    if name == "c":
        from . import _kernels_c  # raises ImportError when not built

        return _kernels_c
    raise ValueError(f"unknown kernel backend {name!r}")
