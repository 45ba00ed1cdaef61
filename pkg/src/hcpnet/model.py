"""Shared CNN, cross-hypothesis max pooling, the three training stages,
test-time prediction and late fusion."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DegenerateInputError, ShapeError
from .nn import functional as F
from .nn.checkpoint import NetworkCheckpoint
from .nn.layers import LayerSpec
from .nn.network import Network
from .nn.optim import ScheduleSpec, sgd_step

log = logging.getLogger(__name__)

CONV, FC_HIDDEN, FC_LAST = 0, 1, 2

STAGE_LRS = {
    "pretrain": (0.01, 0.01, 0.01),
    "ift": (0.001, 0.002, 0.01),
    "hft": (0.0001, 0.0002, 0.001),
}
STAGE_EPOCHS = {"pretrain": 90, "ift": 60, "hft": 60}


@dataclass
class Geometry:
    side: int = 64  # network input
    resize: int = 72  # pre-training images before random cropping


def desk_architecture(num_classes, channels=(8, 16, 32), hidden=64, dropout=0.5):
    """conv3x3-relu-pool blocks, one hidden FC with dropout, then the class FC."""
    specs = []
    for ch in channels:
        specs += [
            LayerSpec("conv", kernel=3, stride=1, pad=1, out=ch, group=CONV),
            LayerSpec("relu"),
            LayerSpec("maxpool", kernel=2, stride=2),
        ]
    specs += [
        LayerSpec("fc", out=hidden, group=FC_HIDDEN),
        LayerSpec("relu"),
        LayerSpec("dropout", ratio=dropout),
        LayerSpec("fc", out=num_classes, group=FC_LAST),
        LayerSpec("softmax"),
    ]
    return specs


def build_shared_cnn(num_classes, rng, side=64, dtype=np.float32, init="he", **arch):
    """Fresh network; hidden layers He-scaled, the class layer N(0, 0.01)."""
    specs = desk_architecture(num_classes, **arch)
    return Network(specs, (3, side, side), rng=rng, dtype=dtype, init=init)


@dataclass
class StageConfig:
    stage: str
    lrs: tuple = None
    epochs: int = None
    batch_size: int = 32
    seed: int = 0
    decay_factor: float = 0.1
    decay_period: int = 20
    momentum: float = 0.9
    weight_decay: float = 0.0005
    augment: bool = True  # random crops (pre-training) and horizontal reflections

    def __post_init__(self):
        if self.stage not in STAGE_LRS:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.lrs is None:
            self.lrs = STAGE_LRS[self.stage]
        if self.epochs is None:
            self.epochs = STAGE_EPOCHS[self.stage]
        if len(self.lrs) != 3:
            raise ConfigError("need three learning rates: conv, hidden fc, last fc")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch size must be positive and epochs non-negative")

    def schedule(self):
        return ScheduleSpec(
            base_lr={CONV: self.lrs[0], FC_HIDDEN: self.lrs[1], FC_LAST: self.lrs[2]},
            decay_factor=self.decay_factor,
            decay_period_epochs=self.decay_period,
            total_epochs=max(self.epochs, 1),
            momentum=self.momentum,
            weight_decay=self.weight_decay,
        )


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)  # (epoch, value) from the eval hook


# ---------------------------------------------------------------- fusion


def fuse_max(outputs):
    """Componentwise max over hypotheses.

    Returns ``(fused, winners)`` where ``winners[j]`` is the lowest index of a
    hypothesis attaining the max for class j.
    """
    v = np.asarray(outputs)
    if v.ndim != 2 or v.shape[0] == 0:
        raise DegenerateInputError("fusion needs at least one hypothesis output")
    winners = np.argmax(v, axis=0)
    return v[winners, np.arange(v.shape[1])], winners


def route_fused_grad(grad, winners, count):
    """Send each class's gradient to its winning hypothesis only."""
    out = np.zeros((count, len(grad)), dtype=np.asarray(grad).dtype)
    out[winners, np.arange(len(grad))] = grad
    return out


def cnn_forward(net, x, train=False, rng=None):
    """Class probabilities for one input (C, H, W) or a batch."""
    return net.forward(x, train=train, rng=rng)


def hcp_loss_and_grad(net, crops, y, train=False, rng=None, scale=1.0):
    """Forward hypotheses, fuse, softmax, squared loss, routed backward.

    Gradients are accumulated into ``net``'s parameters (times ``scale``).
    Returns ``(loss, winners)``.
    """
    logits = net.forward(crops, train=train, rng=rng, logits=True)
    fused, winners = fuse_max(logits)
    p, _ = F.softmax_forward(fused)
    loss, gp = F.squared_loss(p, y)
    gv = F.softmax_backward(gp, p) * scale
    net.backward(route_fused_grad(gv, winners, len(crops)))
    return loss, winners


# ---------------------------------------------------------------- data helpers


def channel_mean(images):
    """Per-channel mean of uint8 (N, H, W, 3) images."""
    return np.asarray(images, dtype=np.float64).reshape(-1, 3).mean(axis=0).astype(np.float32)


INPUT_SCALE = np.float32(1 / 64)  # keeps centred pixel values near unit scale


def to_input(images, mean):
    """uint8/float (N, H, W, 3) or (H, W, 3) -> centred, scaled (N, 3, H, W) float32."""
    x = np.asarray(images, dtype=np.float32)
    x = (x - np.asarray(mean, dtype=np.float32)) * INPUT_SCALE
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def random_crops(images, side, rng, flip=True):
    """Random side x side crops (and horizontal reflections) of (N, R, R, 3) images."""
    n, r = images.shape[0], images.shape[1]
    offs = rng.integers(0, r - side + 1, size=(n, 2))
    flips = rng.random(n) < 0.5 if flip else np.zeros(n, bool)
    out = np.empty((n, side, side, images.shape[3]), dtype=images.dtype)
    for i in range(n):
        y, x = offs[i]
        patch = images[i, y:y + side, x:x + side]
        out[i] = patch[:, ::-1] if flips[i] else patch
    return out, offs


def random_flips(images, rng):
    """Mirror each (N, H, W, 3) image horizontally with probability 1/2."""
    flip = rng.random(len(images)) < 0.5
    out = images.copy()
    out[flip] = images[flip, :, ::-1]
    return out


def center_crops(images, side):
    r = images.shape[1]
    o = (r - side) // 2
    return images[:, o:o + side, o:o + side]


# ---------------------------------------------------------------- stages


def _epoch_batches(n, batch, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def pretrain(net, images, labels, cfg, mean=None, geometry=None, eval_hook=None):
    """Single-label pre-training with softmax + multinomial logistic loss.

    ``images``: uint8 (N, R, R, 3) at the resize geometry; ``labels``: (N,) ints.
    """
    geometry = geometry or Geometry()
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise DataError("pre-training set is empty")
    if images.shape[1] < geometry.side:
        raise ShapeError("pre-training images are smaller than the network input")
    mean = channel_mean(images) if mean is None else mean
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule()
    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _epoch_batches(len(images), cfg.batch_size, rng):
            if cfg.augment:
                batch, _ = random_crops(images[idx], geometry.side, rng)
            else:
                batch = center_crops(images[idx], geometry.side)
            net.zero_grad()
            p = net.forward(to_input(batch, mean), train=True, rng=rng)
            loss, g = F.multinomial_logistic_loss(p, labels[idx])
            net.backward(g)
            sgd_step(net.params, sched, epoch)
            total += loss * len(idx)
        hist.loss.append(total / len(images))
        log.info("pretrain epoch %d loss %.4f", epoch, hist.loss[-1])
        if eval_hook is not None:
            hist.metric.append((epoch, eval_hook(net)))
    ckpt = NetworkCheckpoint.from_network(net, "pretrain", cfg.epochs, mean)
    return ckpt, hist


def transfer_for_finetune(ckpt, num_classes, rng, init_std=0.01):
    """Network with all but the last FC copied from ``ckpt``; that layer is
    replaced by a fresh ``num_classes``-way layer drawn from N(0, init_std)."""
    specs = list(ckpt.specs)
    fc_idx = [i for i, s in enumerate(specs) if s.kind == "fc"]
    if not fc_idx:
        raise ShapeError("checkpoint has no fully connected layer to replace")
    last = fc_idx[-1]
    specs[last] = LayerSpec("fc", out=num_classes, group=specs[last].group)
    values = list(ckpt.values[:-2])
    nin = ckpt.values[-2].shape[1]
    values += [rng.normal(0.0, init_std, size=(num_classes, nin)), np.zeros(num_classes)]
    return Network(specs, ckpt.input_shape, values=values)


def image_fine_tune(ckpt, images, labels, cfg, eval_hook=None, rng_init=None):
    """Whole-image multi-label fine-tuning with the squared loss.

    ``images``: uint8 (N, S, S, 3) already resized to the network input;
    ``labels``: (N, c) 0/1.
    """
    ckpt.require_stage("pretrain")
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.float64)
    if len(images) == 0:
        raise DataError("fine-tuning set is empty")
    if tuple(images.shape[1:3]) != tuple(ckpt.input_shape[1:]):
        raise ShapeError(f"images {images.shape[1:3]} do not match network input {ckpt.input_shape}")
    rng = np.random.default_rng(cfg.seed)
    net = transfer_for_finetune(ckpt, labels.shape[1], rng_init or rng)
    mean = ckpt.mean
    sched = cfg.schedule()
    hist = TrainHistory()
    if eval_hook is not None:
        hist.metric.append((0, eval_hook(net)))
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in _epoch_batches(len(images), cfg.batch_size, rng):
            batch = random_flips(images[idx], rng) if cfg.augment else images[idx]
            net.zero_grad()
            p = net.forward(to_input(batch, mean), train=True, rng=rng)
            loss, gp = F.squared_loss(p, labels[idx])
            net.backward(gp)  # trailing softmax layer chains the Jacobian
            sgd_step(net.params, sched, epoch)
            total += loss * len(idx)
        hist.loss.append(total / len(images))
        log.info("ift epoch %d loss %.5f", epoch, hist.loss[-1])
        if eval_hook is not None:
            hist.metric.append((epoch + 1, eval_hook(net)))
    extra = dict(ckpt.extra)
    out = NetworkCheckpoint.from_network(net, "ift", cfg.epochs, mean, extra)
    return out, hist


def hypothesis_fine_tune(ckpt, hypotheses, labels, cfg, eval_hook=None):
    """Fine-tune through cross-hypothesis max pooling.

    ``hypotheses``: one uint8 (l_i, S, S, 3) array per image (l_i may be 0,
    in which case the image is skipped). Each optimizer step accumulates the
    per-image gradients of ``batch_size`` images, averaged.
    """
    ckpt.require_stage("ift")
    labels = np.asarray(labels, dtype=np.float64)
    if len(hypotheses) != len(labels):
        raise DataError("one hypothesis set per labelled image required")
    usable = [i for i, h in enumerate(hypotheses) if len(h)]
    skipped = len(hypotheses) - len(usable)
    if skipped:
        log.warning("hft: skipping %d images without hypotheses", skipped)
    if not usable:
        raise DataError("no image has any hypothesis")
    usable = np.asarray(usable)
    net = ckpt.to_network(with_momentum=False)
    mean = ckpt.mean
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule()
    hist = TrainHistory()
    if eval_hook is not None:
        hist.metric.append((0, eval_hook(net)))
    for epoch in range(cfg.epochs):
        total = 0.0
        for bidx in _epoch_batches(len(usable), cfg.batch_size, rng):
            imgs = usable[bidx]
            net.zero_grad()
            # all hypotheses of the batch in one pass; fusion stays per image
            crops = np.concatenate([hypotheses[i] for i in imgs])
            bounds = np.cumsum([0] + [len(hypotheses[i]) for i in imgs])
            logits = net.forward(to_input(crops, mean), train=True, rng=rng, logits=True)
            grad = np.zeros_like(logits)
            for j, i in enumerate(imgs):
                lo, hi = bounds[j], bounds[j + 1]
                fused, winners = fuse_max(logits[lo:hi])
                p, _ = F.softmax_forward(fused.astype(np.float64))
                loss, gp = F.squared_loss(p, labels[i])
                gv = F.softmax_backward(gp, p) / len(imgs)
                grad[lo:hi] = route_fused_grad(gv, winners, hi - lo)
                total += loss
            net.backward(grad)
            sgd_step(net.params, sched, epoch)
        hist.loss.append(total / len(usable))
        log.info("hft epoch %d loss %.5f", epoch, hist.loss[-1])
        if eval_hook is not None:
            hist.metric.append((epoch + 1, eval_hook(net)))
    out = NetworkCheckpoint.from_network(net, "hft", cfg.epochs, mean, dict(ckpt.extra))
    return out, hist


# ---------------------------------------------------------------- inference


def predict_hypotheses(net, crops, mean, order="post_softmax", chunk=256):
    """Fused class scores for one image's hypothesis crops (uint8 (l, S, S, 3)).

    ``post_softmax`` takes per-hypothesis probabilities and max-pools them;
    ``pre_softmax`` max-pools logits and applies one softmax afterwards.
    """
    if order not in ("post_softmax", "pre_softmax"):
        raise ConfigError(f"unknown fusion order {order!r}")
    if len(crops) == 0:
        raise DegenerateInputError("no hypotheses")
    outs = []
    for s in range(0, len(crops), chunk):
        x = to_input(crops[s:s + chunk], mean)
        outs.append(net.forward(x, logits=(order == "pre_softmax")))
    fused, _ = fuse_max(np.concatenate(outs))
    if order == "pre_softmax":
        fused, _ = F.softmax_forward(fused)
    return fused


def predict_whole(net, images, mean, chunk=256):
    """Plain CNN probabilities for whole images (N, S, S, 3)."""
    outs = [net.forward(to_input(images[s:s + chunk], mean)) for s in range(0, len(images), chunk)]
    return np.concatenate(outs)


def predict_image(net, mean, crops=None, whole=None, order="post_softmax"):
    """Fused prediction, falling back to the whole image if no hypotheses."""
    if crops is not None and len(crops):
        return predict_hypotheses(net, crops, mean, order)
    if whole is None:
        raise DegenerateInputError("no hypotheses and no whole-image fallback supplied")
    return predict_whole(net, np.asarray(whole)[None], mean)[0]


def minmax(v):
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(axis=-1, keepdims=True), v.max(axis=-1, keepdims=True)
    span = hi - lo
    return np.where(span > 0, (v - lo) / np.where(span > 0, span, 1.0), 0.0)


def late_fusion(a, b, weight=0.5, normalize=True):
    """weight*a + (1-weight)*b, each score vector min-max normalised first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"score shapes differ: {a.shape} vs {b.shape}")
    if not 0 <= weight <= 1:
        raise ConfigError("fusion weight must lie in [0, 1]")
    if normalize:
        a, b = minmax(a), minmax(b)
    return weight * a + (1 - weight) * b
