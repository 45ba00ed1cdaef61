"""PASCAL-style classification AP / mAP."""

import csv
import json
import math
import os
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .manifest import DatasetManifest

RECALL_POINTS = np.arange(11) / 10.0  # exact decimal grid 0.0 .. 1.0


def pr_curve(scores, labels):
    """Precision/recall after each rank; ties keep input order (stable sort)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise DataError("scores and labels differ in length")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    npos = int(labels.sum())
    if npos == 0:
        raise DataError("average precision is undefined without positives")
    return tp / npos, tp / ranks


def _ap_11point_exact(recall, precision, npos):
    """11-point AP as a Fraction: each interpolated precision is some tp/rank."""
    tp = np.rint(recall * npos).astype(np.int64)
    total = Fraction(0)
    for k in range(len(RECALL_POINTS)):
        # recall >= k/10, compared in integers
        idx = np.nonzero(10 * tp >= k * npos)[0]
        if len(idx):
            best = idx[np.argmax(precision[idx])]
            total += Fraction(int(tp[best]), int(best) + 1)
    return total / len(RECALL_POINTS)


def average_precision(scores, labels, method="11point", exact=False):
    """Area under the interpolated PR curve.

    ``11point`` averages the best precision at recall >= 0, 0.1, ..., 1; it
    is accumulated in rational arithmetic and rounded once (``exact=True``
    returns the Fraction itself). ``all`` integrates the interpolated curve
    over every recall step.
    """
    recall, precision = pr_curve(scores, labels)
    if method == "11point":
        ap = _ap_11point_exact(recall, precision, int(np.sum(np.asarray(labels).astype(bool))))
        return ap if exact else float(ap)
    if method == "all":
        mrec = np.concatenate([[0.0], recall, [1.0]])
        mpre = np.concatenate([[0.0], precision, [0.0]])
        mpre = np.maximum.accumulate(mpre[::-1])[::-1]
        steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
        return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    raise ValueError(f"unknown AP method {method!r}")


def _ties_cross_boundary(scores, labels):
    scores = np.asarray(scores)
    labels = np.asarray(labels).astype(bool)
    pos = set(np.unique(scores[labels]).tolist())
    neg = set(np.unique(scores[~labels]).tolist())
    return bool(pos & neg)


@dataclass
class EvalReport:
    classes: list
    ap: dict
    mean_ap: float
    excluded: list = field(default_factory=list)
    tied: list = field(default_factory=list)
    curves: dict = field(default_factory=dict, repr=False)
    method: str = "11point"

    def to_json(self):
        return json.dumps(
            {
                "method": self.method,
                "mAP": self.mean_ap,
                "AP": {c: self.ap[c] for c in self.classes if c in self.ap},
                "excluded_classes": self.excluded,
                "tied_classes": self.tied,
            },
            indent=2,
            sort_keys=True,
        )

    def write_curves_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["class", "rank", "recall", "precision"])
            for c in self.classes:
                if c not in self.curves:
                    continue
                rec, prec = self.curves[c]
                for i, (r, p) in enumerate(zip(rec, prec), start=1):
                    wr.writerow([c, i, repr(float(r)), repr(float(p))])


def mean_ap(scores, labels, classes=None, method="11point"):
    """Per-class AP over columns of (N, c) score/label matrices, plus their mean.

    Classes without any positive are excluded and listed in the report.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DataError(f"score matrix {scores.shape} does not match label matrix {labels.shape}")
    c = scores.shape[1]
    classes = list(classes) if classes is not None else [str(i) for i in range(c)]
    ap, exact, curves, excluded, tied = {}, {}, {}, [], []
    for j, name in enumerate(classes):
        if not np.any(labels[:, j]):
            excluded.append(name)
            continue
        exact[name] = average_precision(scores[:, j], labels[:, j], method, exact=method == "11point")
        ap[name] = float(exact[name])
        curves[name] = pr_curve(scores[:, j], labels[:, j])
        if _ties_cross_boundary(scores[:, j], labels[:, j]):
            tied.append(name)
    if not ap:
        raise DataError("no class has a positive example; nothing to evaluate")
    if method == "11point":
        mean = float(sum(exact.values()) / len(exact))
    else:
        mean = math.fsum(ap.values()) / len(ap)
    return EvalReport(classes, ap, mean, excluded, tied, curves, method)


def write_predictions_csv(path, image_ids, scores, classes):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image", *classes])
        for img, row in zip(image_ids, np.asarray(scores)):
            wr.writerow([img, *(repr(float(v)) for v in row)])


def read_predictions_csv(path):
    """Returns (image ids, score matrix, class names)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read predictions {path}: {exc}") from exc
    if not rows or rows[0][0] != "image":
        raise DataError(f"{path}: missing 'image,...' header")
    classes = rows[0][1:]
    ids, mat = [], []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(classes) + 1:
            raise DataError(f"{path}:{i}: expected {len(classes) + 1} columns")
        ids.append(row[0])
        try:
            mat.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise DataError(f"{path}:{i}: non-numeric score") from exc
    return ids, np.asarray(mat, dtype=np.float64).reshape(-1, len(classes)), classes


def evaluate_files(pred_csv, manifest, method="11point"):
    """Align a prediction CSV with a label manifest (object or path) by image id and score it."""
    if isinstance(manifest, (str, os.PathLike)):
        manifest = DatasetManifest.load(manifest)
    ids, scores, classes = read_predictions_csv(pred_csv)
    if classes != list(manifest.categories):
        raise DataError("prediction classes do not match the manifest categories")
    by_id = {r.image: r.labels for r in manifest.records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"{len(missing)} predicted images are absent from the manifest (e.g. {missing[0]})")
    labels = np.asarray([by_id[i] for i in ids])
    return mean_ap(scores, labels, classes, method)
