"""The localization network: temporal embedding, snippet classifier, actionness.

Per-snippet class activations come from a temporal conv over the embedded
features; the class-agnostic actionness is the sigmoid of the class-summed
activations. Classifier logits stay unbounded (no ReLU on them): clamping
them nonnegative would pin the actionness at >= 0.5 everywhere and make the
0.5 binarization threshold degenerate.

Checkpoint format (little-endian):
    magic b"COLAMDL1"
    u32 feature_dim, u32 num_classes, u32 embed_kernel, u32 cls_kernel
    f64 dropout_rate
    4 tensors in order: embed weight, embed bias, classifier weight,
    classifier bias; each as u32 ndim, u32 dims..., f64 data row-major.
"""

import struct
from dataclasses import dataclass

import numpy as np

from cola.errors import DataFormatError
from cola.numerics import (
    ParamSlot,
    conv1d_backward,
    conv1d_forward,
    dropout,
    dropout_backward,
    relu,
    relu_backward,
    sigmoid,
)

CHECKPOINT_MAGIC = b"COLAMDL1"


@dataclass
class ModelConfig:
    feature_dim: int  # per-stream width d; model operates on 2d channels
    num_classes: int
    embed_kernel: int = 3
    cls_kernel: int = 1
    dropout_rate: float = 0.7

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.embed_kernel < 1 or self.cls_kernel < 1:
            raise ValueError("kernel widths must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def width(self):
        return 2 * self.feature_dim


class ModelParams:
    """ParamSlots for the embedding conv and the classifier conv."""

    def __init__(self, embed_w, embed_b, cls_w, cls_b):
        self.embed_w = ParamSlot(embed_w)
        self.embed_b = ParamSlot(embed_b)
        self.cls_w = ParamSlot(cls_w)
        self.cls_b = ParamSlot(cls_b)

    def slots(self):
        return [self.embed_w, self.embed_b, self.cls_w, self.cls_b]

    def named_slots(self):
        return [("embed_w", self.embed_w), ("embed_b", self.embed_b),
                ("cls_w", self.cls_w), ("cls_b", self.cls_b)]

    def zero_grads(self):
        for slot in self.slots():
            slot.zero_grad()


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


CLS_INIT_GAIN = 0.3  # damped head init keeps the initial video softmax near uniform


def init_params(config, rng):
    """He-uniform conv weights (fan-in = Cin * K), zero biases; the
    classifier head is damped by CLS_INIT_GAIN."""
    w = config.width
    embed_w = he_uniform(rng, (w, w, config.embed_kernel), w * config.embed_kernel)
    cls_w = CLS_INIT_GAIN * he_uniform(rng, (config.num_classes, w, config.cls_kernel),
                                       w * config.cls_kernel)
    return ModelParams(embed_w, np.zeros(w), cls_w, np.zeros(config.num_classes))


@dataclass
class ForwardOutput:
    pre_embed: np.ndarray     # conv output before ReLU (cached for backward)
    embedded: np.ndarray      # (T, 2d), the contrastive-loss feature space
    dropped: np.ndarray       # classifier input after dropout
    dropout_mask: np.ndarray
    tcas: np.ndarray          # (T, C) class activations
    actionness: np.ndarray    # (T,) in (0, 1)
    training: bool


def embed_features(raw, params, config):
    if raw.ndim != 2 or raw.shape[1] != config.width:
        raise ValueError(
            f"expected raw features with {config.width} columns, got shape {raw.shape}")
    pre = conv1d_forward(raw, params.embed_w.value, params.embed_b.value)
    return pre, relu(pre)


def classify_snippets(embedded, params, config, training, rng):
    dropped, mask = dropout(embedded, config.dropout_rate, rng, training)
    tcas = conv1d_forward(dropped, params.cls_w.value, params.cls_b.value)
    return dropped, mask, tcas


def actionness(tcas):
    """Sigmoid of the class-summed activations; one score per snippet."""
    return sigmoid(tcas.sum(axis=1))


def forward(raw, params, config, training=False, rng=None):
    if training and rng is None and config.dropout_rate > 0.0:
        raise ValueError("training-mode forward with dropout needs an rng")
    pre, embedded = embed_features(raw, params, config)
    dropped, mask, tcas = classify_snippets(embedded, params, config, training, rng)
    return ForwardOutput(pre, embedded, dropped, mask, tcas, actionness(tcas), training)


def backward(raw, out, params, config, d_tcas, d_embedded=None):
    """Accumulate parameter gradients for d(loss)/d(tcas) and, optionally,
    a direct d(loss)/d(embedded) contribution (the contrastive term)."""
    d_dropped, g_cls_w, g_cls_b = conv1d_backward(d_tcas, out.dropped, params.cls_w.value)
    params.cls_w.grad += g_cls_w
    params.cls_b.grad += g_cls_b

    if out.training and config.dropout_rate > 0.0:
        d_emb = dropout_backward(d_dropped, out.dropout_mask, config.dropout_rate)
    else:
        d_emb = d_dropped
    if d_embedded is not None:
        d_emb = d_emb + d_embedded

    d_pre = relu_backward(d_emb, out.pre_embed)
    d_raw, g_emb_w, g_emb_b = conv1d_backward(d_pre, raw, params.embed_w.value)
    params.embed_w.grad += g_emb_w
    params.embed_b.grad += g_emb_b
    return d_raw


def _write_tensor(fh, arr):
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def _read_tensor(fh, path):
    offset = fh.tell()
    header = fh.read(4)
    if len(header) < 4:
        raise DataFormatError(f"{path}: truncated tensor header at byte {offset}")
    ndim = struct.unpack("<I", header)[0]
    dims = []
    for _ in range(ndim):
        raw = fh.read(4)
        if len(raw) < 4:
            raise DataFormatError(f"{path}: truncated tensor dims at byte {fh.tell()}")
        dims.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = fh.read(8 * count)
    if len(payload) < 8 * count:
        raise DataFormatError(f"{path}: truncated tensor payload at byte {fh.tell()}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_checkpoint(path, config, params):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", config.feature_dim, config.num_classes,
                             config.embed_kernel, config.cls_kernel))
        fh.write(struct.pack("<d", config.dropout_rate))
        for _, slot in params.named_slots():
            _write_tensor(fh, slot.value)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(
                f"{path}: bad magic at byte 0, expected {CHECKPOINT_MAGIC!r}, got {magic!r}")
        header = fh.read(16)
        if len(header) < 16:
            raise DataFormatError(f"{path}: truncated config header at byte {fh.tell()}")
        d, c, ek, ck = struct.unpack("<IIII", header)
        rate_raw = fh.read(8)
        if len(rate_raw) < 8:
            raise DataFormatError(f"{path}: truncated dropout rate at byte {fh.tell()}")
        rate = struct.unpack("<d", rate_raw)[0]
        config = ModelConfig(d, c, ek, ck, rate)
        tensors = [_read_tensor(fh, path) for _ in range(4)]
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes at byte {fh.tell() - 1}")
    params = ModelParams(*tensors)
    w = config.width
    expected = [(w, w, config.embed_kernel), (w,),
                (config.num_classes, w, config.cls_kernel), (config.num_classes,)]
    for (name, slot), shape in zip(params.named_slots(), expected):
        if slot.value.shape != tuple(shape):
            raise DataFormatError(
                f"{path}: tensor {name} has shape {slot.value.shape}, expected {shape}")
    return config, params
