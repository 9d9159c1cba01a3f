"""Kernel backend selection.

The compiled extension is used when it imports; ``SPECREPLAY_PURE_PYTHON=1``
forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SPECREPLAY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_cy as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

out_size = _kernels_py.out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
