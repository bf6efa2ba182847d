"""Minimal dense-tensor autodiff engine and layers for the separation models."""

import ctypes
import os


def _tune_allocator() -> None:
    """Keep large activation buffers on the heap instead of mmap.

    Training allocates multi-megabyte activation caches every step; with
    glibc defaults those are mmap'd and munmap'd each time, and the page
    faults dominate the step time. Raising the thresholds lets the arena
    recycle them. Set FEATSEP_NO_MALLOC_TUNING=1 to skip.
    """
    if os.environ.get("FEATSEP_NO_MALLOC_TUNING"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except Exception:  # noqa: BLE001 - non-glibc platforms just skip
        pass


_tune_allocator()

from . import autodiff, checkpoint, kernels, layers, optim  # noqa: E402
from .autodiff import Tensor, no_grad  # noqa: E402

__all__ = ["Tensor", "no_grad", "autodiff", "layers", "optim", "checkpoint", "kernels"]
