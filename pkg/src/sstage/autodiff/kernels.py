"""Backend selection for the convolution kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded. Set ``SSTAGE_PURE_PYTHON=1`` to force the fallback.
Callers look functions up on this module at call time, so tests may patch
them.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SSTAGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _c(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, b, ph, pw):
    return _impl.conv2d_forward(_c(x), _c(w), _c(b), int(ph), int(pw))


def conv2d_backward(gy, x, w, ph, pw):
    return _impl.conv2d_backward(_c(gy), _c(x), _c(w), int(ph), int(pw))
