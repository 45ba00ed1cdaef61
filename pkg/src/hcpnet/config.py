"""Flat ``key = value`` configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored.
Values are parsed with the type of the built-in default, so unknown keys
and unparsable values are rejected. Command-line ``--set key=value``
overrides are applied on top of the file. Run ``hcpnet config`` to print
every key with its default.
"""

from .errors import ConfigError

DEFAULTS = {
    # data generation
    "seed": 0,
    "image_size": 192,
    "objects_min": 1,
    "objects_max": 4,
    "object_size_min": 32,
    "object_size_max": 56,
    "aspect_jitter": 0.25,
    "occlusion_prob": 0.15,
    "distractors": 6,
    "pretrain_size": 72,
    "texture_period_min": 7,
    "texture_period_max": 11,
    "pretrain_scale_min": 0.55,
    "pretrain_scale_max": 0.85,
    "count_pretrain": 2800,
    "count_objectness": 300,
    "count_train": 2000,
    "count_test": 500,
    # objectness
    "obj_pos_iou": 0.7,
    "obj_neg_iou": 0.5,
    "obj_neg_per_image": 60,
    "obj_calib_neg_per_size": 4,
    "obj_epochs": 15,
    "obj_reg": 1e-4,
    "obj_lr": 0.5,
    "obj_batch_size": 64,
    "obj_saturation": 60.0,
    "proposals": 200,
    "nms_iou": 0.8,
    # hypotheses selection
    "hs_m": 10,
    "hs_k_train": 1,
    "hs_k_test": 50,
    "hs_min_area": 900,
    "hs_max_ratio": 4.0,
    "hs_thresholds": 32,
    "hs_exact_max_n": 12,
    "hs_solver": "lapack",
    # network
    "input_side": 64,
    "conv_channels": "8,16,32",
    "hidden": 64,
    "dropout": 0.5,
    "batch_size": 32,
    "momentum": 0.9,
    "weight_decay": 0.0005,
    "decay_factor": 0.1,
    "decay_period": 20,
    # desk-scale schedule; the fine-tuning rates are 30x the reference ones
    # (conv, hidden fc, last fc) because the small net sees far fewer steps
    "pretrain_epochs": 15,
    "pretrain_lr": "0.01,0.01,0.01",
    "ift_epochs": 60,
    "ift_lr": "0.03,0.06,0.3",
    "hft_epochs": 10,
    "hft_lr": "0.003,0.006,0.03",
    # prediction and evaluation
    "fusion_order": "post_softmax",
    "fuse_weight": 0.5,
    "ap_method": "11point",
}


def _parse(key, text):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from exc
    return text


class Config(dict):
    """Dict of settings with typed parsing; start from :data:`DEFAULTS`."""

    def __init__(self, values=None):
        super().__init__(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self[key] = _parse(key, value) if isinstance(value, str) else value

    def update_from_text(self, text, origin="<config>"):
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{ln}: expected key = value")
            key, value = line.split("=", 1)
            self.set(key.strip(), value)
        return self

    def apply_overrides(self, items):
        for item in items or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, value = item.split("=", 1)
            self.set(key.strip(), value)
        return self

    @classmethod
    def load(cls, path=None, overrides=()):
        cfg = cls()
        if path:
            with open(path) as fh:
                cfg.update_from_text(fh.read(), path)
        return cfg.apply_overrides(overrides)

    def floats(self, key):
        try:
            return tuple(float(v) for v in str(self[key]).split(","))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected comma-separated numbers") from exc

    def ints(self, key):
        return tuple(int(v) for v in self.floats(key))

    def dumps(self):
        return "".join(f"{k} = {self[k]}\n" for k in DEFAULTS)
