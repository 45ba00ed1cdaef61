"""Kernel backend selection.

The compiled Cython module is preferred; set ``HCPNET_PURE_PYTHON=1`` to force
the numpy fallback. ``BACKEND`` names whichever was loaded.
"""

import os

import numpy as np

from . import _pykernels

_c = None
if os.environ.get("HCPNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

BACKEND = "cython" if _c is not None else "python"


def _contig(a):
    return np.ascontiguousarray(a)


if _c is not None:

    def im2col(x, kh, kw, stride):
        return _c.im2col(_contig(x), kh, kw, stride)

    def col2im(cols, n, c, h, w, kh, kw, stride):
        return _c.col2im(_contig(cols), n, c, h, w, kh, kw, stride)

    def maxpool_forward(x, k, stride):
        return _c.maxpool_forward(_contig(x), k, stride)

    def maxpool_backward(dout, idx, h, w):
        return _c.maxpool_backward(_contig(dout), _contig(idx), h, w)

    def pairwise_iou(boxes):
        return _c.pairwise_iou(np.ascontiguousarray(boxes, dtype=np.int64))

    def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
        return _c.jacobi_eigh(np.ascontiguousarray(a, dtype=np.float64), tol, max_sweeps)

    def nms_sorted(boxes, thr, limit=0):
        return _c.nms_sorted(np.ascontiguousarray(boxes, dtype=np.int64), float(thr), int(limit))

else:
    im2col = _pykernels.im2col
    col2im = _pykernels.col2im
    maxpool_forward = _pykernels.maxpool_forward
    maxpool_backward = _pykernels.maxpool_backward
    pairwise_iou = _pykernels.pairwise_iou
    jacobi_eigh = _pykernels.jacobi_eigh
    nms_sorted = _pykernels.nms_sorted
