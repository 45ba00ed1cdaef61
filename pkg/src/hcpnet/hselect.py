"""Hypotheses selection: IoU affinity, normalized-cut grouping, filtering,
top-k per cluster and square resizing of the surviving windows."""

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .boxes import iou, pairwise_iou
from .errors import ConfigError, DegenerateInputError
from .imageops import crop_resize
from .objectness import Proposals

log = logging.getLogger(__name__)

__all__ = [
    "HSConfig",
    "HypothesisSet",
    "build_affinity",
    "filter_hypotheses",
    "iou",
    "ncut_value",
    "normalized_cut",
    "select_hypotheses",
]


@dataclass
class HSConfig:
    m: int = 10
    k: int = 1
    min_area: int = 900
    max_ratio: float = 4.0
    crop_size: int = 64
    thresholds: int = 32
    exact_max_n: int = 12
    solver: str = "lapack"  # or "jacobi"

    def __post_init__(self):
        if self.m < 1 or self.k < 1 or self.min_area < 1 or self.max_ratio <= 1:
            raise ConfigError("HS config needs m, k, min_area >= 1 and max_ratio > 1")
        if self.solver not in ("lapack", "jacobi"):
            raise ConfigError(f"unknown eigen solver {self.solver!r}")


def build_affinity(proposals):
    boxes = proposals.boxes if isinstance(proposals, Proposals) else proposals
    if len(boxes) < 1:
        raise DegenerateInputError("affinity needs at least one box")
    return pairwise_iou(boxes)


def _degrees(w):
    d = w.sum(axis=1)
    return np.where(d > 0, d, 1.0)


def ncut_value(w, mask):
    """cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V) for the split ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    d = _degrees(w)
    cut = w[np.ix_(mask, ~mask)].sum()
    return cut / d[mask].sum() + cut / d[~mask].sum()


def _exact_split(w):
    """Exhaustive search over all 2^(n-1) - 1 bipartitions; element 0 stays in B."""
    n = len(w)
    d = _degrees(w)
    codes = np.arange(1, 2 ** (n - 1), dtype=np.int64)
    masks = ((codes[:, None] >> np.arange(n - 1)) & 1).astype(bool)
    masks = np.concatenate([masks, np.zeros((len(masks), 1), bool)], axis=1)
    mf = masks.astype(np.float64)
    assoc_a = mf @ d
    assoc_b = d.sum() - assoc_a
    within_a = np.einsum("si,ij,sj->s", mf, w, mf)
    cut = (mf @ w).sum(axis=1) - within_a
    vals = cut / assoc_a + cut / assoc_b
    best = int(np.argmin(vals))
    return float(vals[best]), masks[best]


def _fiedler(w, solver):
    d = _degrees(w)
    dis = 1.0 / np.sqrt(d)
    lap = np.eye(len(w)) - dis[:, None] * w * dis[None, :]
    lap = (lap + lap.T) / 2
    if solver == "jacobi":
        _, vecs = kernels.jacobi_eigh(lap)
    else:
        _, vecs = np.linalg.eigh(lap)
    return vecs[:, 1] * dis


def _refine(w, mask, value):
    """Greedy single-vertex moves while they lower the Ncut value."""
    d = _degrees(w)
    diag = np.diag(w)
    total = d.sum()
    for _ in range(len(w)):
        mf = mask.astype(np.float64)
        to_a = w @ mf
        to_b = w.sum(axis=1) - to_a
        assoc_a = d @ mf
        cut = mf @ to_b
        # move i to the other side
        sign = np.where(mask, -1.0, 1.0)
        new_cut = np.where(mask, cut - to_b + (to_a - diag), cut - to_a + (to_b - diag))
        new_a = assoc_a + sign * d
        new_b = total - new_a
        valid = (new_a > 0) & (new_b > 0)
        valid &= np.where(mask, mf.sum() > 1, (1 - mf).sum() > 1)
        cand = np.full(len(w), np.inf)
        cand[valid] = new_cut[valid] / new_a[valid] + new_cut[valid] / new_b[valid]
        i = int(np.argmin(cand))
        if not cand[i] < value - 1e-12:
            break
        mask = mask.copy()
        mask[i] = ~mask[i]
        value = float(cand[i])
    return value, mask


def _spectral_split(w, cfg):
    x = _fiedler(w, cfg.solver)
    lo, hi = x.min(), x.max()
    best, best_mask = np.inf, None
    if hi - lo > 1e-12 * max(1.0, abs(hi)):
        for t in np.linspace(lo, hi, cfg.thresholds + 2)[1:-1]:
            mask = x > t
            if mask.all() or not mask.any():
                continue
            v = ncut_value(w, mask)
            if v < best:
                best, best_mask = v, mask
    if best_mask is None:
        # flat eigenvector: fall back to the best singleton split
        for i in range(len(w)):
            mask = np.zeros(len(w), bool)
            mask[i] = True
            v = ncut_value(w, mask)
            if v < best:
                best, best_mask = v, mask
    return _refine(w, best_mask, best)


def best_bipartition(w, cfg=None):
    """Best two-way split of the graph ``w``: (Ncut value, boolean mask)."""
    cfg = cfg or HSConfig()
    if len(w) < 2:
        raise DegenerateInputError("cannot split fewer than two nodes")
    if len(w) <= cfg.exact_max_n:
        return _exact_split(w)
    return _spectral_split(w, cfg)


def normalized_cut(w, m, cfg=None):
    """Recursive two-way normalized cuts until ``m`` clusters exist.

    At every step the cluster whose best internal split has the lowest Ncut
    value is split. Cluster ids are ordered by each cluster's smallest member.
    """
    cfg = cfg or HSConfig()
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    if m > n:
        raise DegenerateInputError(f"cannot form {m} clusters from {n} items")
    if m < 1:
        raise ConfigError("m must be >= 1")

    def plan(members):
        if len(members) < 2:
            return (np.inf, members, None)
        value, mask = best_bipartition(w[np.ix_(members, members)], cfg)
        return (value, members, mask)

    clusters = [plan(np.arange(n))]
    while len(clusters) < m:
        splittable = [i for i, c in enumerate(clusters) if c[2] is not None]
        pick = min(splittable, key=lambda i: (clusters[i][0], clusters[i][1][0]))
        _, members, mask = clusters.pop(pick)
        clusters += [plan(members[mask]), plan(members[~mask])]
    labels = np.empty(n, dtype=np.int64)
    for cid, (_, members, _) in enumerate(sorted(clusters, key=lambda c: c[1].min())):
        labels[members] = cid
    return labels


def filter_hypotheses(proposals, labels, cfg):
    """Indices of proposals passing the area and aspect-ratio filter."""
    b = proposals.boxes
    area = b[:, 2] * b[:, 3]
    ratio = np.maximum(b[:, 2] / b[:, 3], b[:, 3] / b[:, 2])
    keep = (area >= cfg.min_area) & (ratio <= cfg.max_ratio)
    idx = np.nonzero(keep)[0]
    return idx, np.asarray(labels)[idx]


@dataclass
class HypothesisSet:
    crops: np.ndarray  # (l, S, S, 3) uint8
    boxes: np.ndarray  # (l, 4)
    scores: np.ndarray
    clusters: np.ndarray

    def __len__(self):
        return len(self.boxes)


def choose(proposals, cfg):
    """Cluster, filter and pick up to m*k proposals; no cropping.

    Returns ``(picked indices, cluster labels of all proposals, survivor
    indices)``. Clusters short of k survivors are backfilled with the
    best-scored unpicked survivors overall. With no proposals or no
    survivors the pick is empty.
    """
    n = len(proposals)
    empty = np.zeros(0, dtype=np.int64)
    if n == 0:
        return empty, empty, empty
    m = min(cfg.m, n)
    labels = normalized_cut(build_affinity(proposals), m, cfg)
    surv, surv_labels = filter_hypotheses(proposals, labels, cfg)
    if len(surv) == 0:
        return empty, labels, surv
    # survivors ordered by descending score (proposals may arrive unsorted)
    order = np.lexsort((surv, -proposals.scores[surv]))
    surv, surv_labels = surv[order], surv_labels[order]
    picked = []
    taken = np.zeros(len(surv), bool)
    for cid in range(m):
        rows = np.nonzero(surv_labels == cid)[0][: cfg.k]
        taken[rows] = True
        picked.extend(surv[rows])
    want = min(cfg.m * cfg.k, len(surv))
    if len(picked) < want:
        spare = surv[~taken][: want - len(picked)]
        picked.extend(spare)
    return np.asarray(picked, dtype=np.int64), labels, surv


def select_hypotheses(image, proposals, cfg=None):
    """Hypothesis crops for one image (H, W, 3).

    Raises :class:`DegenerateInputError` when no proposal survives filtering.
    """
    cfg = cfg or HSConfig()
    picked, labels, _ = choose(proposals, cfg)
    if len(picked) == 0:
        raise DegenerateInputError("no proposal survives the hypothesis filter")
    s = cfg.crop_size
    crops = np.zeros((len(picked), s, s, 3), dtype=np.uint8)
    for j, i in enumerate(picked):
        crops[j] = np.clip(np.rint(crop_resize(image, proposals.boxes[i], s)), 0, 255)
    return HypothesisSet(crops, proposals.boxes[picked], proposals.scores[picked], labels[picked])


def hs_dump_records(image_id, proposals, cfg):
    """JSON-ready rows ``{image, cluster, box, score, kept}`` for every proposal."""
    picked, labels, _ = choose(proposals, cfg)
    kept = np.zeros(len(proposals), bool)
    kept[picked] = True
    return [
        {
            "image": image_id,
            "cluster": int(labels[i]),
            "box": [int(v) for v in proposals.boxes[i]],
            "score": float(proposals.scores[i]),
            "kept": bool(kept[i]),
        }
        for i in range(len(proposals))
    ]


def dump_jsonl(rows, fh):
    for row in rows:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
