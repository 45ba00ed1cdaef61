"""Pure numpy versions of the hot kernels.

Used when the compiled ``_ckernels`` module is unavailable, or when
``HCPNET_PURE_PYTHON=1`` is set. Results agree with the compiled kernels to
floating point reassociation (col2im sums in a different order).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (N, C, OH, OW, kh, kw) -> (C, kh, kw, N, OH, OW)
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols, n, c, h, w, kh, kw, stride):
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    cols6 = cols.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols6[:, i, j].transpose(1, 0, 2, 3)
    return out


def maxpool_forward(x, k, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    dy, dx = np.divmod(arg, k)
    rows = np.arange(oh)[:, None] * stride + dy
    colsx = np.arange(ow)[None, :] * stride + dx
    idx = (rows * w + colsx).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(dout, idx, h, w):
    n, c = dout.shape[:2]
    dx = np.zeros((n * c, h * w), dtype=dout.dtype)
    flat_idx = idx.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), flat_idx.shape[1])
    np.add.at(dx, (rows, flat_idx.ravel()), dout.reshape(-1))
    return dx.reshape(n, c, h, w)


def pairwise_iou(boxes):
    b = np.asarray(boxes, dtype=np.int64)
    x0, y0, w, h = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    x1, y1 = x0 + w, y0 + h
    iw = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    ih = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = w * h
    union = area[:, None] + area[None, :] - inter
    out = inter.astype(np.float64) / union.astype(np.float64)
    np.fill_diagonal(out, 1.0)
    return out


def jacobi_eigh(a_in, tol=1e-12, max_sweeps=100):
    a = np.array(a_in, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sum(np.triu(a, 1) ** 2)
        scale = np.sum(np.diag(a) ** 2)
        if off == 0.0 or off <= tol * tol * (scale + off):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                cs = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * cs
                colp, colq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cs * colp - sn * colq
                a[:, q] = sn * colp + cs * colq
                rowp, rowq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = cs * rowp - sn * rowq
                a[q, :] = sn * rowp + cs * rowq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = cs * vp - sn * vq
                v[:, q] = sn * vp + cs * vq
    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    return evals[order], v[:, order]


def nms_sorted(boxes, thr, limit):
    b = np.asarray(boxes, dtype=np.int64)
    n = len(b)
    x0, y0 = b[:, 0], b[:, 1]
    x1, y1 = x0 + b[:, 2], y0 + b[:, 3]
    area = b[:, 2] * b[:, 3]
    kept = []
    alive = np.ones(n, dtype=bool)
    for i in range(n):
        if not alive[i]:
            continue
        kept.append(i)
        if 0 < limit <= len(kept):
            break
        rest = np.arange(i + 1, n)
        rest = rest[alive[rest]]
        if len(rest) == 0:
            break
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        ov = inter / (area[i] + area[rest] - inter)
        alive[rest[ov >= thr]] = False
    return np.asarray(kept, dtype=np.int64)
