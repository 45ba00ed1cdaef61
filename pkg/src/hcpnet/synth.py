"""Synthetic multi-label scenes of textured shapes.

Categories are (shape, texture) pairs. Several share a silhouette and differ
only in fine texture, which survives at object scale but washes out when the
whole scene is shrunk to network input size.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .imageops import resize, write_ppm
from .manifest import DatasetManifest

CLASS_CATEGORIES = (
    ("disk", "solid"),
    ("disk", "stripes"),
    ("square", "solid"),
    ("square", "checker"),
    ("triangle", "solid"),
    ("triangle", "stripes"),
    ("cross", "solid"),
    ("cross", "dots"),
    ("ring", "solid"),
    ("ring", "stripes"),
)
# disjoint pool: objectness training and extra pre-training classes
EXTRA_CATEGORIES = (
    ("diamond", "solid"),
    ("star", "stripes"),
    ("hexagon", "checker"),
    ("crescent", "dots"),
)


def category_name(cat):
    return f"{cat[0]}-{cat[1]}"


@dataclass
class SyntheticSpec:
    image_size: int = 192
    categories: tuple = CLASS_CATEGORIES
    extra_categories: tuple = EXTRA_CATEGORIES
    objects_min: int = 1
    objects_max: int = 4
    size_min: int = 32
    size_max: int = 56
    aspect_jitter: float = 0.25
    occlusion_prob: float = 0.15
    distractors: int = 6
    texture_period_min: int = 7
    texture_period_max: int = 11
    pretrain_size: int = 72
    # object extent in pre-training images, as a fraction of the image side
    pretrain_scale_min: float = 0.55
    pretrain_scale_max: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if len(self.categories) == 0:
            raise ConfigError("synthetic spec needs at least one category")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ConfigError("objects per image range is invalid")
        if self.size_max > self.image_size:
            raise ConfigError("objects larger than the image")
        if not 2 <= self.texture_period_min <= self.texture_period_max:
            raise ConfigError("texture period range is invalid")
        if not 0 < self.pretrain_scale_min <= self.pretrain_scale_max <= 1:
            raise ConfigError("pre-training object scale range must lie in (0, 1]")


def _shape_mask(shape, u, v):
    r = np.hypot(u, v)
    if shape == "disk":
        return r <= 1.0
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.92
    if shape == "triangle":
        return (v <= 0.9) & (np.abs(u) <= (v + 1.0) * 0.5)
    if shape == "ring":
        return (r <= 1.0) & (r >= 0.55)
    if shape == "cross":
        inside = np.maximum(np.abs(u), np.abs(v)) <= 1.0
        return inside & ((np.abs(u) <= 0.34) | (np.abs(v) <= 0.34))
    if shape == "diamond":
        return np.abs(u) + np.abs(v) <= 1.0
    if shape == "star":
        return r <= 0.55 + 0.42 * np.cos(5 * np.arctan2(v, u))
    if shape == "hexagon":
        return np.maximum(np.abs(u) * 0.866 + np.abs(v) * 0.5, np.abs(v)) <= 0.92
    if shape == "crescent":
        return (r <= 1.0) & (np.hypot(u - 0.45, v) > 0.75)
    raise ConfigError(f"unknown shape {shape!r}")


def _texture(kind, yy, xx, rng, period_range=(7, 11)):
    """Boolean 'dark' pattern over local pixel coordinates."""
    if kind == "solid":
        return np.zeros(yy.shape, dtype=bool)
    period = int(rng.integers(period_range[0], period_range[1] + 1))
    if kind == "stripes":
        axis = yy if rng.random() < 0.5 else xx
        return (axis // (period // 2 + period % 2)) % 2 == 1
    if kind == "checker":
        half = max(period // 2, 2)
        return ((yy // half) + (xx // half)) % 2 == 1
    if kind == "dots":
        return ((yy % period) < 2) & ((xx % period) < 2)
    raise ConfigError(f"unknown texture {kind!r}")


def _background(size, rng):
    coarse = rng.uniform(70, 180, size=(5, 5, 1)) + rng.uniform(-25, 25, size=(1, 1, 3))
    bg = resize(coarse, size, size)
    bg += rng.normal(0, 3.0, size=bg.shape)
    return bg


def _object_color(bg_luma, rng):
    for _ in range(50):
        col = rng.uniform(0, 255, size=3)
        luma = col @ np.array([0.299, 0.587, 0.114])
        if abs(luma - bg_luma) >= 70:
            return col
    return np.full(3, 0.0 if bg_luma > 128 else 255.0)


def _draw_object(canvas, category, box, rng, period_range=(7, 11)):
    shape, texture = category
    x0, y0, w, h = box
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w * 2 - 1
    v = (yy + 0.5) / h * 2 - 1
    mask = _shape_mask(shape, u, v)
    dark = _texture(texture, yy, xx, rng, period_range)
    region = canvas[y0:y0 + h, x0:x0 + w]
    bg_luma = float(region.mean(axis=(0, 1)) @ np.array([0.299, 0.587, 0.114]))
    col = _object_color(bg_luma, rng)
    pix = np.where(dark[..., None], col * 0.3, col[None, None, :])
    region[mask] = pix[mask]
    ys, xs = np.nonzero(mask)
    return (x0 + int(xs.min()), y0 + int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def _draw_distractors(canvas, count, rng):
    size = canvas.shape[0]
    for _ in range(count):
        r = int(rng.integers(2, 5))
        cy, cx = rng.integers(r, size - r, size=2)
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        m = yy * yy + xx * xx <= r * r
        patch = canvas[cy - r:cy + r + 1, cx - r:cx + r + 1]
        patch[m] = patch[m] + rng.uniform(-30, 30)


def _box_iou(a, b):
    iw = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    ih = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def render_scene(spec, rng, categories=None):
    """One multi-object image. Returns (uint8 image, [(category index, box)])."""
    categories = spec.categories if categories is None else categories
    size = spec.image_size
    canvas = _background(size, rng)
    _draw_distractors(canvas, spec.distractors, rng)
    count = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    placed = []
    for _ in range(count):
        cat = int(rng.integers(len(categories)))
        allow = 0.35 if rng.random() < spec.occlusion_prob else 0.0
        for _attempt in range(200):
            s = int(rng.integers(spec.size_min, spec.size_max + 1))
            ar = 1.0 + rng.uniform(-spec.aspect_jitter, spec.aspect_jitter)
            w = int(np.clip(round(s * ar), 8, size))
            h = int(np.clip(round(s / ar), 8, size))
            x0 = int(rng.integers(0, size - w + 1))
            y0 = int(rng.integers(0, size - h + 1))
            if all(_box_iou((x0, y0, w, h), b) <= allow for _, b in placed):
                break
        else:
            continue
        placed.append((cat, (x0, y0, w, h)))
    periods = (spec.texture_period_min, spec.texture_period_max)
    objects = [(cat, _draw_object(canvas, categories[cat], box, rng, periods)) for cat, box in placed]
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8), objects


def render_single(spec, rng, cat, categories):
    """Centered single object for the pre-training split."""
    size = spec.pretrain_size
    canvas = _background(size, rng)
    _draw_distractors(canvas, max(spec.distractors // 4, 1), rng)
    s = int(rng.integers(int(size * spec.pretrain_scale_min), int(size * spec.pretrain_scale_max) + 1))
    ar = 1.0 + rng.uniform(-spec.aspect_jitter, spec.aspect_jitter)
    w = int(np.clip(round(s * ar), 8, size))
    h = int(np.clip(round(s / ar), 8, size))
    jitter = max((size - max(w, h)) // 4, 0)
    x0 = int(np.clip((size - w) // 2 + rng.integers(-jitter, jitter + 1), 0, size - w))
    y0 = int(np.clip((size - h) // 2 + rng.integers(-jitter, jitter + 1), 0, size - h))
    periods = (spec.texture_period_min, spec.texture_period_max)
    box = _draw_object(canvas, categories[cat], (x0, y0, w, h), rng, periods)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8), box


def _rng(spec, split, index):
    tag = sum(ord(ch) << (8 * i) for i, ch in enumerate(split[:8]))
    return np.random.default_rng(np.random.SeedSequence([spec.seed, tag, index]))


def generate_split(spec, split, count, out_dir):
    """Render ``count`` images for ``split`` and return the manifest.

    ``train``/``val``/``test`` hold multi-label scenes of the classification
    categories; ``objectness`` holds scenes of the disjoint extra categories;
    ``pretrain`` holds centered single objects from both pools.
    """
    if count < 1:
        raise ConfigError("split counts must be >= 1")
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    if split == "pretrain":
        cats = tuple(spec.categories) + tuple(spec.extra_categories)
    elif split == "objectness":
        cats = tuple(spec.extra_categories) or tuple(spec.categories)
    else:
        cats = tuple(spec.categories)
    man = DatasetManifest([category_name(c) for c in cats], split, root=out_dir)
    for i in range(count):
        rng = _rng(spec, split, i)
        rel = os.path.join("images", f"{split}_{i:05d}.ppm")
        if split == "pretrain":
            cat = i % len(cats)
            img, box = render_single(spec, rng, cat, cats)
            objects = [(cat, box)]
        else:
            img, objects = render_scene(spec, rng, cats)
        write_ppm(os.path.join(out_dir, rel), img)
        labels = [0] * len(cats)
        for cat, _ in objects:
            labels[cat] = 1
        man.add(
            rel,
            labels,
            [{"x0": b[0], "y0": b[1], "w": b[2], "h": b[3], "category": int(cat)} for cat, b in objects],
        )
    man.save(os.path.join(out_dir, f"{split}.jsonl"))
    return man


def gen_synthetic(spec, counts, out_dir):
    """Generate every split in ``counts`` (name -> image count)."""
    if not spec.categories:
        raise ConfigError("synthetic spec needs at least one category")
    return {split: generate_split(spec, split, n, out_dir) for split, n in counts.items()}
