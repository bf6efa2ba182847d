"""Kernel backend selection.

The compiled extension accelerates the GRU backward scan (fused gate
adjoints + direct BLAS); the forward scan leans on numpy's SIMD
transcendentals and the convolutions are GEMM-bound, so those are shared.
Set FEATSEP_PURE_PYTHON=1 to force the fallback (parity tests, benchmark).
"""

from __future__ import annotations

import os

from . import _kernels_py

conv1d_forward = _kernels_py.conv1d_forward
conv1d_backward = _kernels_py.conv1d_backward
conv_transpose1d_forward = _kernels_py.conv_transpose1d_forward
conv_transpose1d_backward = _kernels_py.conv_transpose1d_backward
gru_forward = _kernels_py.gru_forward

if os.environ.get("FEATSEP_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    gru_backward = _compiled.gru_backward
    BACKEND = "compiled"
else:
    gru_backward = _kernels_py.gru_backward
    BACKEND = "python"


def backend_name() -> str:
    return BACKEND
