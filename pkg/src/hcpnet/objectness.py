"""Normed-gradient objectness: scored candidate windows for an image.

A linear 8x8 template is applied to the gradient-magnitude map resampled at
every quantized window size, then calibrated per size so that scores are
comparable across sizes.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .boxes import BoundingBox, as_box_array, iou_many
from .errors import DataError, DegenerateInputError
from .imageops import grayscale, interp_matrix

log = logging.getLogger(__name__)

FEATURE = 8
NORM_EPS = 1.0
# half-octave ladder, each a multiple of 4 so the stride size/4 is integral
SIZE_LADDER = (16, 24, 32, 44, 64, 92, 128, 180, 256, 360, 512)


def default_sizes(width, height, ladder=SIZE_LADDER):
    ws = [s for s in ladder if s <= width]
    hs = [s for s in ladder if s <= height]
    return [(w, h) for w in ws for h in hs]


@dataclass(frozen=True)
class ScoredProposal:
    box: BoundingBox
    score: float


@dataclass
class Proposals:
    """Parallel arrays of boxes (x0, y0, w, h) and scores."""

    boxes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.int64).reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.boxes) != len(self.scores):
            raise DataError("boxes and scores differ in length")

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return Proposals(self.boxes[i], self.scores[i])
        return ScoredProposal(BoundingBox(*(int(v) for v in self.boxes[i])), float(self.scores[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_list(cls, items):
        items = list(items)
        return cls([tuple(p.box) for p in items], [p.score for p in items])

    def order(self):
        """Descending score, ties broken by ascending (x0, y0, w, h)."""
        b = self.boxes
        return np.lexsort((b[:, 3], b[:, 2], b[:, 1], b[:, 0], -self.scores))

    def sorted(self):
        return self[self.order()]

    def to_records(self):
        return [
            {"x0": int(b[0]), "y0": int(b[1]), "w": int(b[2]), "h": int(b[3]), "score": float(s)}
            for b, s in zip(self.boxes, self.scores)
        ]


@dataclass
class ObjectnessModel:
    weights: np.ndarray = field(default_factory=lambda: np.full((FEATURE, FEATURE), 1.0 / FEATURE**2))
    bias: float = 0.0
    calibration: dict = field(default_factory=dict)  # (w, h) -> (scale, offset)
    saturation: float = 255.0
    energy_weight: float = 0.0  # weight of the log edge-energy feature

    def raw_scores(self, feats):
        """Linear score of window features from :func:`window_features`."""
        wv = np.asarray(self.weights, dtype=np.float64).ravel()
        return feats[:, :-1] @ wv + self.energy_weight * feats[:, -1] + self.bias

    def calibrate(self, size, raw):
        scale, offset = self.calibration.get(tuple(size), (1.0, 0.0))
        return scale * raw + offset

    def to_json(self):
        return json.dumps(
            {
                "weights": np.asarray(self.weights).tolist(),
                "bias": float(self.bias),
                "saturation": float(self.saturation),
                "energy_weight": float(self.energy_weight),
                "calibration": [[w, h, s, o] for (w, h), (s, o) in sorted(self.calibration.items())],
            }
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            bias=float(d["bias"]),
            saturation=float(d.get("saturation", 255.0)),
            energy_weight=float(d.get("energy_weight", 0.0)),
            calibration={(int(w), int(h)): (float(s), float(o)) for w, h, s, o in d["calibration"]},
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


def normed_gradient_map(image, saturation=255.0):
    """``min(|dI/dx| + |dI/dy|, saturation)`` on the grayscale image.

    Forward differences; the last row/column carry no gradient.
    """
    img = np.asarray(image, dtype=np.float64)
    g = grayscale(img) if img.ndim == 3 else img
    if g.shape[0] < 2 or g.shape[1] < 2:
        raise DegenerateInputError("gradient map needs an image of at least 2x2")
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, :-1] = np.abs(np.diff(g, axis=1))
    gy[:-1, :] = np.abs(np.diff(g, axis=0))
    return np.minimum(gx + gy, saturation)


def _positions(extent, size):
    stride = max(size // 4, 1)
    count = (extent - size) // stride + 1
    return stride, count


def window_features(ng, size, normalize=True):
    """8x8 resampled features for every window of one size.

    Returns ``(boxes, feats)``. With ``normalize`` the feats have shape
    (n, 65): the L2-normalised 8x8 pattern followed by ``log1p`` of the mean
    cell value, so that shape and edge strength enter the score separately
    and flat windows are not mistaken for patterns. Otherwise they are the
    raw (n, 64) cells. Windows step by a quarter of their size, which is two
    feature cells, so one global resampling of the map serves all windows.
    """
    h, w = ng.shape
    ww, wh = size
    sx, nx = _positions(w, ww)
    sy, ny = _positions(h, wh)
    if nx < 1 or ny < 1:
        return np.zeros((0, 4), np.int64), np.zeros((0, FEATURE * FEATURE + bool(normalize)))
    step = FEATURE // 4
    gx = step * (nx - 1) + FEATURE
    gy = step * (ny - 1) + FEATURE
    ax = interp_matrix(w, gx, 0.0, gx * ww / FEATURE)
    ay = interp_matrix(h, gy, 0.0, gy * wh / FEATURE)
    grid = ay @ ng @ ax.T
    win = sliding_window_view(grid, (FEATURE, FEATURE))[::step, ::step]
    feats = win.reshape(ny * nx, FEATURE * FEATURE)
    if normalize:
        energy = np.log1p(feats.mean(axis=1, keepdims=True))
        feats = np.hstack([feats / (np.linalg.norm(feats, axis=1, keepdims=True) + NORM_EPS), energy])
    yy, xx = np.meshgrid(np.arange(ny) * sy, np.arange(nx) * sx, indexing="ij")
    boxes = np.stack([xx.ravel(), yy.ravel(), np.full(nx * ny, ww), np.full(nx * ny, wh)], axis=1)
    return boxes.astype(np.int64), feats


def box_features(ng, boxes):
    """Features of arbitrary boxes, resampled the same way as grid windows."""
    h, w = ng.shape
    out = []
    for x0, y0, bw, bh in np.asarray(boxes, dtype=np.int64).reshape(-1, 4):
        ay = interp_matrix(h, FEATURE, float(y0), float(bh))
        ax = interp_matrix(w, FEATURE, float(x0), float(bw))
        out.append((ay @ ng @ ax.T).ravel())
    if not out:
        return np.zeros((0, FEATURE * FEATURE + 1))
    f = np.asarray(out)
    energy = np.log1p(f.mean(axis=1, keepdims=True))
    return np.hstack([f / (np.linalg.norm(f, axis=1, keepdims=True) + NORM_EPS), energy])


def score_windows(image, model, sizes=None):
    """Score every window at every quantized size; returns sorted Proposals."""
    ng = normed_gradient_map(image, model.saturation)
    if sizes is None:
        sizes = default_sizes(ng.shape[1], ng.shape[0])
    sizes = list(sizes)
    if not sizes:
        raise DataError("empty window size set")
    all_boxes, all_scores = [], []
    for size in sizes:
        boxes, feats = window_features(ng, size)
        if len(boxes) == 0:
            continue
        raw = model.raw_scores(feats)
        all_boxes.append(boxes)
        all_scores.append(model.calibrate(size, raw))
    if not all_boxes:
        return Proposals(np.zeros((0, 4)), np.zeros(0))
    return Proposals(np.concatenate(all_boxes), np.concatenate(all_scores)).sorted()


def nms(proposals, iou_threshold, limit=None):
    """Greedy suppression in descending score order.

    A proposal is kept iff its IoU with every already-kept proposal is below
    ``iou_threshold``. ``limit`` stops once that many are kept.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    props = proposals if isinstance(proposals, Proposals) else Proposals.from_list(proposals)
    props = props.sorted()
    if len(props) == 0:
        return props
    return props[kernels.nms_sorted(props.boxes, iou_threshold, limit or 0)]


def generate_proposals(image, model, n, nms_iou=0.8, sizes=None):
    """Top-``n`` windows after NMS, sorted by descending score."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return nms(score_windows(image, model, sizes), nms_iou, limit=n)


def recall_evaluation(proposals_per_image, gt_per_image, iou_threshold=0.5):
    """Fraction of ground-truth boxes hit by some proposal at ``iou_threshold``."""
    covered = total = 0
    for props, gts in zip(proposals_per_image, gt_per_image):
        gts = as_box_array(gts) if len(gts) else np.zeros((0, 4), np.int64)
        total += len(gts)
        pb = props.boxes if isinstance(props, Proposals) else np.asarray(props, dtype=np.int64).reshape(-1, 4)
        if len(gts) == 0 or len(pb) == 0:
            continue
        covered += int(np.sum(iou_many(gts, pb).max(axis=1) >= iou_threshold))
    if total == 0:
        raise DataError("no ground-truth boxes to evaluate")
    return covered / total


@dataclass
class ObjectnessConfig:
    # tighter than the usual 0.5 / 0.3: partial windows (IoU 0.3-0.5) must be
    # negatives, or corner fragments outrank the whole object
    pos_iou: float = 0.7
    neg_iou: float = 0.5
    neg_per_image: int = 60
    calib_neg_per_size: int = 4
    epochs: int = 15
    reg: float = 1e-4
    lr: float = 0.5
    batch_size: int = 64
    seed: int = 0
    # low cap: any clear edge saturates, so contrast does not dominate the score
    saturation: float = 60.0


def _collect(annotated, cfg, rng):
    """Per-size positive windows, plus two negative samples.

    ``exact`` holds the features of the ground-truth boxes themselves; they
    join the template fit (tightly aligned examples) but not the per-size
    calibration, which must reflect grid windows only.

    ``neg`` feeds the template fit (uniform over all negative windows of the
    image). ``calib`` feeds the per-size calibration: a few negatives per
    size per image, each carrying the weight ``available / taken`` so the
    weighted fit sees the true per-size base rate.
    """
    pos, neg, calib, exact = {}, {}, {}, []
    extent = [0, 0]
    for image, gt in annotated:
        gt = as_box_array(gt) if len(gt) else np.zeros((0, 4), np.int64)
        ng = normed_gradient_map(image, cfg.saturation)
        extent = [max(extent[0], ng.shape[1]), max(extent[1], ng.shape[0])]
        if len(gt):
            exact.append(box_features(ng, gt))
        cand = []
        for size in default_sizes(ng.shape[1], ng.shape[0]):
            boxes, feats = window_features(ng, size)
            if len(boxes) == 0:
                continue
            best = iou_many(boxes, gt).max(axis=1) if len(gt) else np.zeros(len(boxes))
            p = best >= cfg.pos_iou
            if np.any(p):
                pos.setdefault(size, []).append(feats[p])
            nidx = np.nonzero(best < cfg.neg_iou)[0]
            if len(nidx) == 0:
                continue
            cand.append((size, feats[nidx]))
            take = rng.choice(nidx, size=min(cfg.calib_neg_per_size, len(nidx)), replace=False)
            calib.setdefault(size, []).append((feats[np.sort(take)], len(nidx) / len(take)))
        total = sum(len(f) for _, f in cand)
        if total and cfg.neg_per_image > 0:
            take = np.sort(rng.choice(total, size=min(cfg.neg_per_image, total), replace=False))
            offset = 0
            for size, f in cand:
                local = take[(take >= offset) & (take < offset + len(f))] - offset
                if len(local):
                    neg.setdefault(size, []).append(f[local])
                offset += len(f)
    pos = {k: np.concatenate(v) for k, v in pos.items()}
    neg = {k: np.concatenate(v) for k, v in neg.items()}
    exact = np.concatenate(exact) if exact else np.zeros((0, FEATURE * FEATURE + 1))
    return pos, neg, calib, exact, extent


def _fit_hinge(x, y, cfg, rng):
    """Class-balanced linear SVM by minibatch subgradient descent."""
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    n_pos = max(int(np.sum(y > 0)), 1)
    n_neg = max(int(np.sum(y < 0)), 1)
    cw = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    batch = cfg.batch_size
    for epoch in range(cfg.epochs):
        lr = cfg.lr / (1.0 + epoch)
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            xb, yb, cb = x[idx], y[idx], cw[idx]
            active = (yb * (xb @ w + b) < 1.0) * cb * yb
            w = w * (1.0 - lr * cfg.reg) + lr * (active @ xb) / len(idx)
            b += lr * active.sum() / len(idx)
    return w, b


def train_objectness(annotated, cfg=None):
    """Fit the window template and per-size calibration.

    ``annotated`` is an iterable of ``(image, boxes)`` pairs.
    """
    cfg = cfg or ObjectnessConfig()
    rng = np.random.default_rng(cfg.seed)
    pos, neg, calib, exact, extent = _collect(annotated, cfg, rng)
    if not pos:
        raise DataError("no positive windows could be extracted from the annotations")
    if not neg:
        raise DataError("negative window pool is empty")
    xp = np.concatenate([pos[k] for k in sorted(pos)] + [exact])
    xn = np.concatenate([neg[k] for k in sorted(neg)])
    x = np.concatenate([xp, xn])
    y = np.concatenate([np.ones(len(xp)), -np.ones(len(xn))])
    w, b = _fit_hinge(x, y, cfg, rng)
    model = ObjectnessModel(
        weights=w[:-1].reshape(FEATURE, FEATURE), bias=b, saturation=cfg.saturation, energy_weight=w[-1]
    )

    # weighted least-squares map of raw score to {1: object, 0: background}
    # per size; sizes never sampled get a flat zero score
    nfeat = x.shape[1]
    for size in default_sizes(*extent):
        model.calibration[size] = (0.0, 0.0)
    for size in sorted(set(pos) | set(calib)):
        fp = pos.get(size, np.zeros((0, nfeat)))
        chunks = calib.get(size, [])
        fn = np.concatenate([f for f, _ in chunks]) if chunks else np.zeros((0, nfeat))
        wn = np.concatenate([np.full(len(f), wt) for f, wt in chunks]) if chunks else np.zeros(0)
        raw = model.raw_scores(np.concatenate([fp, fn]))
        target = np.concatenate([np.ones(len(fp)), np.zeros(len(fn))])
        sw = np.sqrt(np.concatenate([np.ones(len(fp)), wn]))
        design = np.stack([raw, np.ones_like(raw)], axis=1)
        (s, o), *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
        model.calibration[size] = (float(s), float(o))
    log.info("objectness: %d positive / %d negative windows, %d sizes", len(xp), len(xn), len(model.calibration))
    return model
