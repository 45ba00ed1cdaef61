"""Integer pixel boxes ``(x0, y0, w, h)`` and pixel-count IoU."""

from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError


class BoundingBox(NamedTuple):
    x0: int
    y0: int
    w: int
    h: int

    @property
    def area(self):
        return self.w * self.h

    def clip(self, width, height):
        x0 = min(max(self.x0, 0), width - 1)
        y0 = min(max(self.y0, 0), height - 1)
        x1 = min(self.x0 + self.w, width)
        y1 = min(self.y0 + self.h, height)
        return BoundingBox(x0, y0, max(x1 - x0, 1), max(y1 - y0, 1))


def as_box_array(boxes):
    arr = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    if np.any(arr[:, 2:] < 1):
        raise DataError("boxes need positive width and height")
    return np.ascontiguousarray(arr)


def iou(a, b):
    """|a ∩ b| / |a ∪ b| over integer pixel counts."""
    ax0, ay0, aw, ah = (int(v) for v in a)
    bx0, by0, bw, bh = (int(v) for v in b)
    iw = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    ih = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    inter = iw * ih if iw > 0 and ih > 0 else 0
    return inter / (aw * ah + bw * bh - inter)


def iou_many(boxes, others):
    """IoU matrix between two box arrays, shape (len(boxes), len(others))."""
    a, b = as_box_array(boxes), as_box_array(others)
    iw = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]) - np.maximum(
        a[:, None, 0], b[None, :, 0]
    )
    ih = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]) - np.maximum(
        a[:, None, 1], b[None, :, 1]
    )
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter.astype(np.float64) / union.astype(np.float64)


def pairwise_iou(boxes):
    return kernels.pairwise_iou(as_box_array(boxes))
