# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures mirror ``hcpnet._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int stride):
    """Unfold a padded (N, C, H, W) batch into (C*kh*kw, N*OH*OW) columns."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    cdef Py_ssize_t p = oh * ow
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((c * kh * kw, n * p), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, y0, base
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ch * kh + i) * kw + j
                for b in range(n):
                    base = b * p
                    for oy in range(oh):
                        y0 = oy * stride + i
                        for ox in range(ow):
                            out[row, base + oy * ow + ox] = x[b, ch, y0, ox * stride + j]
    return out_arr


def col2im(real[:, ::1] cols, int n, int c, int h, int w, int kh, int kw, int stride):
    """Adjoint of :func:`im2col`: scatter-add columns back into (N, C, H, W)."""
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (w - kw) // stride + 1
    cdef Py_ssize_t p = oh * ow
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, h, w), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, y0, base
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ch * kh + i) * kw + j
                for b in range(n):
                    base = b * p
                    for oy in range(oh):
                        y0 = oy * stride + i
                        for ox in range(ow):
                            out[b, ch, y0, ox * stride + j] += cols[row, base + oy * ow + ox]
    return out_arr


def maxpool_forward(real[:, :, :, ::1] x, int k, int stride):
    """Window max plus flat argmax (row-major, first hit wins on ties)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, oy, ox, i, j, yy, xx, best_i
    cdef real best, v
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    yy = oy * stride
                    xx = ox * stride
                    best = x[b, ch, yy, xx]
                    best_i = yy * w + xx
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, yy + i, xx + j]
                            if v > best:
                                best = v
                                best_i = (yy + i) * w + xx + j
                    out[b, ch, oy, ox] = best
                    idx[b, ch, oy, ox] = best_i
    return out_arr, idx_arr


def maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] idx, int h, int w):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.zeros((n, c, h * w), dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, oy, ox
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    dx[b, ch, idx[b, ch, oy, ox]] += dout[b, ch, oy, ox]
    return dx_arr.reshape(n, c, h, w)


def pairwise_iou(cnp.int64_t[:, ::1] boxes):
    """IoU matrix over integer (x0, y0, w, h) boxes, exact pixel counts."""
    cdef Py_ssize_t n = boxes.shape[0]
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t a, b
    cdef cnp.int64_t iw, ih, inter, area_a, area_b
    for a in range(n):
        out[a, a] = 1.0
        area_a = boxes[a, 2] * boxes[a, 3]
        for b in range(a + 1, n):
            iw = min(boxes[a, 0] + boxes[a, 2], boxes[b, 0] + boxes[b, 2]) - max(boxes[a, 0], boxes[b, 0])
            ih = min(boxes[a, 1] + boxes[a, 3], boxes[b, 1] + boxes[b, 3]) - max(boxes[a, 1], boxes[b, 1])
            if iw <= 0 or ih <= 0:
                inter = 0
            else:
                inter = iw * ih
            area_b = boxes[b, 2] * boxes[b, 3]
            out[a, b] = <double>inter / <double>(area_a + area_b - inter)
            out[b, a] = out[a, b]
    return out_arr


def jacobi_eigh(double[:, ::1] a_in, double tol=1e-12, int max_sweeps=100):
    """Cyclic Jacobi eigensolver for a dense symmetric matrix.

    Returns eigenvalues ascending and the matching column eigenvectors.
    """
    cdef Py_ssize_t n = a_in.shape[0]
    a_arr = np.array(a_in, dtype=np.float64, copy=True)
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, r, sweep
    cdef double off, scale, apq, theta, t, cs, sn, arp, arq, vrp, vrq, app, aqq
    for sweep in range(max_sweeps):
        off = 0.0
        scale = 0.0
        for p in range(n):
            scale += a[p, p] * a[p, p]
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if off <= tol * tol * (scale + off) or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if fabs(apq) < 1e-300:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                cs = 1.0 / sqrt(t * t + 1.0)
                sn = t * cs
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = cs * arp - sn * arq
                    a[r, q] = sn * arp + cs * arq
                for r in range(n):
                    arp = a[p, r]
                    arq = a[q, r]
                    a[p, r] = cs * arp - sn * arq
                    a[q, r] = sn * arp + cs * arq
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = cs * vrp - sn * vrq
                    v[r, q] = sn * vrp + cs * vrq
    evals = np.diag(a_arr).copy()
    order = np.argsort(evals, kind="stable")
    return evals[order], v_arr[:, order]


def nms_sorted(cnp.int64_t[:, ::1] boxes, double thr, Py_ssize_t limit):
    """Greedy NMS over boxes already in descending score order.

    Returns kept row indices; stops after ``limit`` keeps (``limit <= 0``
    means no limit).
    """
    cdef Py_ssize_t n = boxes.shape[0]
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef Py_ssize_t nk = 0, i, k, j
    cdef cnp.int64_t iw, ih, inter, ai, aj
    cdef bint ok
    for i in range(n):
        ok = True
        ai = boxes[i, 2] * boxes[i, 3]
        for k in range(nk):
            j = keep[k]
            iw = min(boxes[i, 0] + boxes[i, 2], boxes[j, 0] + boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            if iw <= 0:
                continue
            ih = min(boxes[i, 1] + boxes[i, 3], boxes[j, 1] + boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if ih <= 0:
                continue
            inter = iw * ih
            aj = boxes[j, 2] * boxes[j, 3]
            if <double>inter / <double>(ai + aj - inter) >= thr:
                ok = False
                break
        if ok:
            keep[nk] = i
            nk += 1
            if limit > 0 and nk >= limit:
                break
    return keep_arr[:nk].copy()
