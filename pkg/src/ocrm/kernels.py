"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``OCRM_PURE_PYTHON=1`` to force the
numpy fallback (useful for benchmarking and for checking the two agree).
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("OCRM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
smo_solve = _impl.smo_solve

__all__ = ["BACKEND", "im2col", "col2im", "smo_solve"]
