"""Glue between manifests, proposals, hypotheses and the CNN stages.

Nothing here reads bounding boxes from a manifest: only image paths and
label vectors flow into the classification stages.
"""

import json
import logging

import numpy as np

from .errors import DataError, DegenerateInputError
from .hselect import HSConfig, select_hypotheses
from .imageops import resize
from .objectness import Proposals, generate_proposals

log = logging.getLogger(__name__)


def load_images(manifest):
    return [manifest.load_image(rec) for rec in manifest]


def resize_all(images, side):
    """uint8 (N, side, side, 3) whole-image thumbnails."""
    out = np.zeros((len(images), side, side, 3), dtype=np.uint8)
    for i, img in enumerate(images):
        out[i] = np.clip(np.rint(resize(img, side, side)), 0, 255)
    return out


def single_labels(manifest):
    """Class index per record for single-label data."""
    labels = manifest.labels_matrix()
    counts = labels.sum(axis=1)
    if np.any(counts != 1):
        raise DataError("pre-training manifest must have exactly one label per image")
    return labels.argmax(axis=1)


def compute_proposals(images, model, n, nms_iou=0.8):
    return [generate_proposals(img, model, n, nms_iou) for img in images]


def hypothesis_crops(images, proposals, cfg):
    """One uint8 (l, S, S, 3) array per image; l = 0 when nothing survives
    (training skips such images, prediction falls back to the whole image)."""
    out = []
    for img, props in zip(images, proposals):
        try:
            out.append(select_hypotheses(img, props, cfg).crops)
        except DegenerateInputError:
            out.append(np.zeros((0, cfg.crop_size, cfg.crop_size, 3), dtype=np.uint8))
    return out


def write_proposals(path, image_ids, proposals):
    with open(path, "w") as fh:
        for image_id, props in zip(image_ids, proposals):
            row = {
                "image": image_id,
                "boxes": [[int(v) for v in b] for b in props.boxes],
                "scores": [float(s) for s in props.scores],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_proposals(path):
    """Returns ``{image id: Proposals}``."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                boxes = np.asarray(row["boxes"], dtype=np.int64).reshape(-1, 4)
                scores = np.asarray(row["scores"], dtype=np.float64)
                out[row["image"]] = Proposals(boxes, scores)
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{ln}: malformed proposal record ({exc})") from exc
    return out


def proposals_for(manifest, dump):
    missing = [rec.image for rec in manifest if rec.image not in dump]
    if missing:
        raise DataError(f"no proposals for {len(missing)} images, e.g. {missing[0]}")
    return [dump[rec.image] for rec in manifest]


def default_hs(k, crop_size=64):
    return HSConfig(k=k, crop_size=crop_size)
