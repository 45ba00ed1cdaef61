"""Binary checkpoint format.

Layout, all little-endian::

    b"HCP1" | u32 version
    u32 C, u32 H, u32 W                      network input shape
    u32 layer count, then per layer:
        u8 kind | u32 group | u32 kernel | u32 stride | u32 pad | u32 out | f32 ratio
    u32 parameter count, then per parameter:
        u32 ndim | ndim x u32 dims | f32 values | f32 momentum buffer
    metadata:
        u8 len + ascii stage tag (pretrain | ift | hft)
        u32 epoch
        u32 count + f32 dataset mean
        u32 len + utf-8 JSON of extra fields (class names, ...)

Parameters are stored as float32; a float32 network roundtrips bit-exactly.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointFormatError, StageMismatchError
from .layers import KINDS, LayerSpec
from .network import Network

MAGIC = b"HCP1"
VERSION = 1
STAGES = ("pretrain", "ift", "hft")

_LAYER = struct.Struct("<BIIIIIf")


@dataclass
class NetworkCheckpoint:
    specs: list
    input_shape: tuple
    values: list
    momenta: list
    stage: str
    epoch: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net, stage, epoch=0, mean=None, extra=None):
        if stage not in STAGES:
            raise ValueError(f"unknown stage tag {stage!r}")
        return cls(
            specs=list(net.specs),
            input_shape=net.input_shape,
            values=[np.array(p.value, dtype=np.float32) for p in net.params],
            momenta=[np.array(p.momentum_buf, dtype=np.float32) for p in net.params],
            stage=stage,
            epoch=int(epoch),
            mean=np.zeros(0, np.float32) if mean is None else np.asarray(mean, np.float32).ravel(),
            extra=dict(extra or {}),
        )

    def to_network(self, dtype=np.float32, with_momentum=True):
        net = Network(self.specs, self.input_shape, values=self.values, dtype=dtype)
        if with_momentum:
            for p, m in zip(net.params, self.momenta):
                p.momentum_buf[...] = m
        return net

    def require_stage(self, *stages):
        if self.stage not in stages:
            raise StageMismatchError(
                f"checkpoint is tagged {self.stage!r}, expected one of {', '.join(stages)}"
            )


def dumps(ckpt):
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<3I", *ckpt.input_shape)]
    out.append(struct.pack("<I", len(ckpt.specs)))
    for s in ckpt.specs:
        out.append(_LAYER.pack(KINDS.index(s.kind), s.group, s.kernel, s.stride, s.pad, s.out, s.ratio))
    out.append(struct.pack("<I", len(ckpt.values)))
    for v, m in zip(ckpt.values, ckpt.momenta):
        v = np.asarray(v, dtype="<f4")
        out.append(struct.pack("<I", v.ndim))
        out.append(struct.pack(f"<{v.ndim}I", *v.shape))
        out.append(v.tobytes(order="C"))
        out.append(np.asarray(m, dtype="<f4").tobytes(order="C"))
    tag = ckpt.stage.encode("ascii")
    out.append(struct.pack("<B", len(tag)) + tag)
    out.append(struct.pack("<I", ckpt.epoch))
    mean = np.asarray(ckpt.mean, dtype="<f4").ravel()
    out.append(struct.pack("<I", mean.size) + mean.tobytes())
    blob = json.dumps(ckpt.extra, sort_keys=True).encode("utf-8")
    out.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))


def loads(buf):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic; not an HCP1 checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    input_shape = r.unpack("<3I")
    (nlayers,) = r.unpack("<I")
    specs = []
    for _ in range(nlayers):
        kind, group, kernel, stride, pad, out, ratio = r.unpack(_LAYER.format)
        if kind >= len(KINDS):
            raise CheckpointFormatError(f"unknown layer kind code {kind}")
        # f32 ratio: round back to the value written
        specs.append(LayerSpec(KINDS[kind], kernel, stride, pad, out, float(np.float32(ratio)), group))
    (nparams,) = r.unpack("<I")
    values, momenta = [], []
    for _ in range(nparams):
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        values.append(np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32))
        momenta.append(np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32))
    (taglen,) = r.unpack("<B")
    stage = r.take(taglen).decode("ascii")
    if stage not in STAGES:
        raise CheckpointFormatError(f"unknown stage tag {stage!r}")
    (epoch,) = r.unpack("<I")
    (nmean,) = r.unpack("<I")
    mean = np.frombuffer(r.take(4 * nmean), dtype="<f4").astype(np.float32)
    (nblob,) = r.unpack("<I")
    extra = json.loads(r.take(nblob).decode("utf-8"))
    if r.pos != len(buf):
        raise CheckpointFormatError("trailing bytes after checkpoint metadata")
    return NetworkCheckpoint(specs, tuple(input_shape), values, momenta, stage, epoch, mean, extra)


def save(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
