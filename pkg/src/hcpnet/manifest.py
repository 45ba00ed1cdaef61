"""JSON-lines dataset manifests.

The first line is a header ``{"categories": [...], "split": ...}``; every
further line is one image record::

    {"image": "images/train_00000.ppm", "labels": [0, 1, ...],
     "objects": [{"x0": .., "y0": .., "w": .., "h": .., "category": ..}, ...]}

Object boxes are only meant for objectness training and recall evaluation.
Reads through :attr:`ImageRecord.objects` are counted in
``DatasetManifest.box_reads`` so tests can audit which stages touch them.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .imageops import read_image

SPLITS = ("train", "val", "test", "pretrain", "objectness")


@dataclass
class ImageRecord:
    image: str
    labels: list
    _objects: list = field(default_factory=list, repr=False)
    _owner: "DatasetManifest" = field(default=None, repr=False, compare=False)

    @property
    def objects(self):
        if self._owner is not None:
            self._owner.box_reads += 1
        return self._objects

    @property
    def label_vector(self):
        return np.asarray(self.labels, dtype=np.float64)

    @property
    def class_id(self):
        """Single-label index (pre-training records)."""
        return int(np.argmax(self.labels))


@dataclass
class DatasetManifest:
    categories: list
    split: str
    records: list = field(default_factory=list)
    root: str = "."
    box_reads: int = 0

    def __post_init__(self):
        for r in self.records:
            r._owner = self

    @property
    def num_classes(self):
        return len(self.categories)

    def add(self, image, labels, objects=()):
        rec = ImageRecord(image, list(labels), list(objects), self)
        self.records.append(rec)
        return rec

    def image_path(self, rec):
        return rec.image if os.path.isabs(rec.image) else os.path.join(self.root, rec.image)

    def load_image(self, rec):
        return read_image(self.image_path(rec))

    def labels_matrix(self):
        return np.asarray([r.labels for r in self.records], dtype=np.float64).reshape(-1, self.num_classes)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def dumps(self):
        lines = [json.dumps({"categories": self.categories, "split": self.split}, sort_keys=True)]
        for r in self.records:
            lines.append(
                json.dumps({"image": r.image, "labels": r.labels, "objects": r._objects}, sort_keys=True)
            )
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path, root=None):
        root = os.path.dirname(os.path.abspath(path)) if root is None else root
        try:
            with open(path) as fh:
                rows = [json.loads(line) for line in fh if line.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if not rows or "categories" not in rows[0]:
            raise DataError(f"{path}: missing manifest header line")
        header = rows[0]
        c = len(header["categories"])
        man = cls(list(header["categories"]), header.get("split", "train"), root=root)
        for i, row in enumerate(rows[1:], start=2):
            try:
                labels = [int(v) for v in row["labels"]]
                image = row["image"]
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{i}: malformed record") from exc
            if len(labels) != c or any(v not in (0, 1) for v in labels):
                raise DataError(f"{path}:{i}: label vector must be {c} entries of 0/1")
            objects = row.get("objects", [])
            for ob in objects:
                if not {"x0", "y0", "w", "h"} <= set(ob) or ob["w"] < 1 or ob["h"] < 1:
                    raise DataError(f"{path}:{i}: malformed object box")
                if "category" in ob and not 0 <= int(ob["category"]) < max(c, 1) + 1000:
                    raise DataError(f"{path}:{i}: bad object category")
            man.add(image, labels, objects)
        return man
