"""Layer primitives with explicit backward passes.

Every forward returns ``(out, cache)``; the matching backward consumes the
cache. Spatial ops take ``(N, C, H, W)`` batches; a single ``(C, H, W)`` image
is accepted and the batch axis is dropped again on output.
"""

import numpy as np

from .. import kernels
from ..errors import DataError, ShapeError


def _batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")
    return x, False


def conv2d_forward(x, weights, bias, stride=1, pad=0):
    x4, single = _batched(x)
    n, c, h, w = x4.shape
    f, wc, kh, kw = weights.shape
    if wc != c:
        raise ShapeError(f"input has {c} channels but weights expect {wc}")
    if bias.shape != (f,):
        raise ShapeError(f"bias shape {bias.shape} does not match {f} filters")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError("kernel larger than padded input")
    if pad:
        x4 = np.pad(x4, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    hp, wp = x4.shape[2], x4.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = kernels.im2col(x4, kh, kw, stride)  # (C*kh*kw, N*OH*OW)
    out = weights.reshape(f, -1) @ cols
    out += bias[:, None]
    out = out.reshape(f, n, oh, ow).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)
    cache = (cols, weights, (n, c, hp, wp), stride, pad, single)
    return (out[0] if single else out), cache


def conv2d_backward(dout, cache, input_grad=True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``input_grad`` is False."""
    cols, weights, (n, c, hp, wp), stride, pad, single = cache
    f, _, kh, kw = weights.shape
    d = dout[None] if single else dout
    d = np.ascontiguousarray(d.transpose(1, 0, 2, 3)).reshape(f, -1)
    db = d.sum(axis=1)
    dw = (d @ cols.T).reshape(weights.shape)
    if not input_grad:
        return None, dw, db
    dcols = weights.reshape(f, -1).T @ d
    dx = kernels.col2im(dcols, n, c, hp, wp, kh, kw, stride)
    if pad:
        dx = dx[:, :, pad:hp - pad, pad:wp - pad]
    return (dx[0] if single else dx), dw, db


def relu_forward(x):
    mask = x > 0
    return np.maximum(x, 0), mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool2d_forward(x, k, stride):
    x4, single = _batched(x)
    h, w = x4.shape[2], x4.shape[3]
    if k > h or k > w:
        raise ShapeError(f"pool window {k} exceeds input {h}x{w}")
    out, idx = kernels.maxpool_forward(x4, k, stride)
    return (out[0] if single else out), (idx, h, w, single)


def maxpool2d_backward(dout, cache):
    idx, h, w, single = cache
    d = dout[None] if single else dout
    dx = kernels.maxpool_backward(d, idx, h, w)
    return dx[0] if single else dx


def fc_forward(x, weights, bias):
    """``x`` is (n,) or (N, ...) and is flattened per sample."""
    single = x.ndim == 1
    x2 = x[None] if single else x.reshape(x.shape[0], -1)
    m, nin = weights.shape
    if x2.shape[1] != nin:
        raise ShapeError(f"fully connected layer expects {nin} inputs, got {x2.shape[1]}")
    if bias.shape != (m,):
        raise ShapeError(f"bias shape {bias.shape} does not match {m} outputs")
    out = x2 @ weights.T + bias
    return (out[0] if single else out), (x2, x.shape, weights, single)


def fc_backward(dout, cache):
    x2, xshape, weights, single = cache
    d = dout[None] if single else dout
    dw = d.T @ x2
    db = d.sum(axis=0)
    dx = (d @ weights).reshape(xshape)
    return dx, dw, db


def dropout_forward(x, ratio, train, rng=None):
    if not 0 <= ratio < 1:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not train or ratio == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = rng.random(x.shape) >= ratio
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - ratio)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax_forward(x):
    """Softmax over the last axis."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, p


def softmax_backward(dout, p):
    return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


def multinomial_logistic_loss(p, labels):
    """Mean of ``-log p[label]`` and the fused gradient w.r.t. pre-softmax scores.

    ``p`` is (c,) or (N, c); the returned gradient has the same shape and
    already includes the softmax Jacobian, i.e. ``(p - onehot) / N``.
    """
    single = p.ndim == 1
    p2 = p[None] if single else p
    labels = np.atleast_1d(np.asarray(labels))
    c = p2.shape[1]
    if labels.shape[0] != p2.shape[0]:
        raise ShapeError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= c):
        raise DataError(f"label out of range for {c} classes")
    rows = np.arange(p2.shape[0])
    picked = np.maximum(p2[rows, labels], np.finfo(p2.dtype).tiny)
    loss = float(-np.log(picked).mean())
    grad = p2.copy()
    grad[rows, labels] -= 1
    grad /= p2.shape[0]
    return loss, (grad[0] if single else grad)


def target_distribution(y):
    """L1-normalised label vector(s); rejects rows without a positive."""
    y = np.asarray(y, dtype=np.float64)
    s = y.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise DataError("label vector has no positive entry")
    return y / s


def squared_loss(p, y):
    """Mean over images of ``sum_k (p_k - y_k/|y|_1)^2``.

    Returns the loss and its gradient with respect to ``p`` (not chained
    through softmax; use :func:`softmax_backward` for that).
    """
    single = p.ndim == 1
    p2 = p[None] if single else p
    target = target_distribution(np.atleast_2d(y)).astype(p2.dtype, copy=False)
    if target.shape != p2.shape:
        raise ShapeError(f"prediction shape {p2.shape} vs labels {target.shape}")
    diff = p2 - target
    n = p2.shape[0]
    loss = float((diff.astype(np.float64) ** 2).sum() / n)
    grad = 2.0 * diff / n
    return loss, (grad[0] if single else grad)
