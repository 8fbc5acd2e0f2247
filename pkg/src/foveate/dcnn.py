"""From-scratch convolutional classifier on numpy arrays.

The architecture is a stack of conv(3x3) + ReLU + maxpool(2x2) blocks,
followed by fully connected ReLU layers (with inverted dropout between the
first two) and a softmax output. Everything is implemented directly:
im2col convolutions, argmax-routed pooling backprop, analytic gradients,
and plain SGD. Batches are NHWC; training at single precision is the
default, while gradient verification builds float64 networks.

Out of scope by design: momentum, weight decay, batch norm, augmentation,
and GPU execution.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError

DEFAULT_CONV_FILTERS = (32, 32, 64, 64, 128, 256, 256)
DEFAULT_FC_WIDTHS = (132, 132, 132)
DEFAULT_NUM_CLASSES = 9
DEFAULT_DROPOUT_RATE = 0.5
LOSS_EPSILON = 1e-12
_CHECKPOINT_MAGIC = b"FNET1"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; the defaults give the full-size classifier.

    Dropout, when enabled, sits between the first two fully connected layers
    only; specs with fewer than two FC layers have no dropout site.
    """

    conv_filters: tuple[int, ...] = DEFAULT_CONV_FILTERS
    kernel: tuple[int, int] = (3, 3)
    pool: tuple[int, int] = (2, 2)
    fc_widths: tuple[int, ...] = DEFAULT_FC_WIDTHS
    num_classes: int = DEFAULT_NUM_CLASSES
    dropout_rate: float = DEFAULT_DROPOUT_RATE
    padding: str = "same"

    def __post_init__(self):
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate!r}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes!r}")
        for group, name in ((self.conv_filters, "conv_filters"), (self.fc_widths, "fc_widths")):
            if any(int(v) < 1 for v in group):
                raise ValueError(f"{name} entries must be positive, got {group!r}")
        if min(self.kernel) < 1 or min(self.pool) < 1:
            raise ValueError("kernel and pool dims must be positive")


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    """3x3-style convolution via im2col, stride 1, 'same' or 'valid' padding."""

    def __init__(self, name, kernel, c_in, c_out, padding, rng, dtype):
        kh, kw = kernel
        self.name = name
        self.padding = padding
        self.kernel = (kh, kw)
        self.w = _he_uniform(rng, (kh, kw, c_in, c_out), kh * kw * c_in, dtype)
        self.b = np.zeros(c_out, dtype=dtype)

    @property
    def params(self):
        return [self.w, self.b]

    def _pads(self):
        kh, kw = self.kernel
        if self.padding == "same":
            return (kh - 1) // 2, kh // 2, (kw - 1) // 2, kw // 2
        return 0, 0, 0, 0

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        kh, kw = self.kernel
        pt, pb, pl, pr = self._pads()
        oh, ow = h + pt + pb - kh + 1, w + pl + pr - kw + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"{self.name}: {self.kernel} kernel with {self.padding!r} padding "
                f"collapses a {h}x{w} input"
            )
        return (oh, ow, self.w.shape[3])

    def _im2col(self, xp, oh, ow):
        n = xp.shape[0]
        kh, kw = self.kernel
        c_in = xp.shape[3]
        cols = np.empty((n, oh, ow, kh, kw, c_in), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xp[:, i : i + oh, j : j + ow, :]
        return cols

    def forward(self, x, training, rng):
        pt, pb, pl, pr = self._pads()
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
        oh, ow, c_out = self.output_shape(x.shape[1:])
        cols = self._im2col(xp, oh, ow)
        kh, kw = self.kernel
        c_in = xp.shape[3]
        mat = cols.reshape(-1, kh * kw * c_in)
        out = mat @ self.w.reshape(-1, c_out) + self.b
        return out.reshape(x.shape[0], oh, ow, c_out), (mat, x.shape, xp.shape, (oh, ow))

    def backward(self, dout, cache):
        mat, x_shape, xp_shape, (oh, ow) = cache
        n = x_shape[0]
        kh, kw = self.kernel
        c_in = xp_shape[3]
        c_out = self.w.shape[3]
        dmat = dout.reshape(-1, c_out)
        dw = (mat.T @ dmat).reshape(self.w.shape)
        db = dmat.sum(axis=0)
        dcols = (dmat @ self.w.reshape(-1, c_out).T).reshape(n, oh, ow, kh, kw, c_in)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + oh, j : j + ow, :] += dcols[:, :, :, i, j, :]
        pt, _, pl, _ = self._pads()
        h, w = x_shape[1], x_shape[2]
        dx = dxp[:, pt : pt + h, pl : pl + w, :]
        return dx, [dw, db]


class ReLU:
    params: list = []

    def __init__(self, name):
        self.name = name

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, training, rng):
        return np.maximum(x, 0), x > 0

    def backward(self, dout, cache):
        return dout * cache, []


class MaxPool:
    """Non-overlapping max pooling with floor division of spatial dims."""

    params: list = []

    def __init__(self, name, pool):
        self.name = name
        self.pool = pool

    def output_shape(self, in_shape):
        h, w, c = in_shape
        ph, pw = self.pool
        oh, ow = h // ph, w // pw
        if oh < 1 or ow < 1:
            raise ValueError(f"{self.name}: pooling collapses a {h}x{w} input to zero")
        return (oh, ow, c)

    def forward(self, x, training, rng):
        n, h, w, c = x.shape
        ph, pw = self.pool
        oh, ow = h // ph, w // pw
        window = (
            x[:, : oh * ph, : ow * pw, :]
            .reshape(n, oh, ph, ow, pw, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, oh, ow, c, ph * pw)
        )
        idx = window.argmax(axis=4)
        out = np.take_along_axis(window, idx[..., None], axis=4)[..., 0]
        return out, (idx, x.shape)

    def backward(self, dout, cache):
        idx, x_shape = cache
        n, h, w, c = x_shape
        ph, pw = self.pool
        oh, ow = h // ph, w // pw
        dwindow = np.zeros((n, oh, ow, c, ph * pw), dtype=dout.dtype)
        np.put_along_axis(dwindow, idx[..., None], dout[..., None], axis=4)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, : oh * ph, : ow * pw, :] = (
            dwindow.reshape(n, oh, ow, c, ph, pw)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, oh * ph, ow * pw, c)
        )
        return dx, []


class Flatten:
    params: list = []

    def __init__(self, name):
        self.name = name

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), []


class Dense:
    def __init__(self, name, n_in, n_out, rng, dtype):
        self.name = name
        self.w = _he_uniform(rng, (n_in, n_out), n_in, dtype)
        self.b = np.zeros(n_out, dtype=dtype)

    @property
    def params(self):
        return [self.w, self.b]

    def output_shape(self, in_shape):
        return (self.w.shape[1],)

    def forward(self, x, training, rng):
        return x @ self.w + self.b, x

    def backward(self, dout, cache):
        return dout @ self.w.T, [cache.T @ dout, dout.sum(axis=0)]


class Dropout:
    """Inverted dropout: training activations are scaled by 1/(1 - rate) so
    inference needs no rescaling and is a pure pass-through."""

    params: list = []

    def __init__(self, name, rate):
        self.name = name
        self.rate = rate

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            return x, None
        mask = rng.random(x.shape) >= self.rate
        scale = np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        return x * mask * scale, (mask, scale)

    def backward(self, dout, cache):
        if cache is None:
            return dout, []
        mask, scale = cache
        return dout * mask * scale, []


class Network:
    """Layer stack with its own RNG stream (used only by dropout)."""

    def __init__(self, spec, input_shape, layers, shape_trace, seed, dtype):
        self.spec = spec
        self.input_shape = tuple(int(v) for v in input_shape)
        self.layers = layers
        self.shape_trace = shape_trace
        self.seed = int(seed)
        self.dtype = dtype
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def build_network(
    spec: NetworkSpec,
    input_shape: tuple[int, int, int],
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """Instantiate a network with He-uniform weights and zero biases.

    Shape inference runs while building: any conv or pool stage that would
    collapse a spatial dimension to zero raises and names the stage. Only
    parameter tensors are allocated here. ``shape_trace`` records every
    stage's output shape for inspection.
    """
    h, w, c = (int(v) for v in input_shape)
    if h < 1 or w < 1 or c < 1:
        raise ValueError(f"input_shape must be positive, got {input_shape!r}")
    rng = np.random.default_rng(seed)
    layers: list = []
    trace: list[tuple[str, tuple[int, ...]]] = [("input", (h, w, c))]
    shape: tuple[int, ...] = (h, w, c)

    for i, c_out in enumerate(spec.conv_filters, start=1):
        conv = Conv2D(f"conv{i}", spec.kernel, shape[2], int(c_out), spec.padding, rng, dtype)
        shape = conv.output_shape(shape)
        layers.append(conv)
        trace.append((conv.name, shape))
        relu = ReLU(f"relu{i}")
        layers.append(relu)
        pool = MaxPool(f"pool{i}", spec.pool)
        shape = pool.output_shape(shape)
        layers.append(pool)
        trace.append((pool.name, shape))

    flat = Flatten("flatten")
    shape = flat.output_shape(shape)
    layers.append(flat)
    trace.append((flat.name, shape))

    for i, width in enumerate(spec.fc_widths, start=1):
        dense = Dense(f"fc{i}", shape[0], int(width), rng, dtype)
        shape = dense.output_shape(shape)
        layers.append(dense)
        layers.append(ReLU(f"fc{i}_relu"))
        trace.append((dense.name, shape))
        if i == 1 and len(spec.fc_widths) >= 2 and spec.dropout_rate > 0.0:
            layers.append(Dropout("dropout", spec.dropout_rate))
            trace.append(("dropout", shape))

    out = Dense("output", shape[0], spec.num_classes, rng, dtype)
    layers.append(out)
    trace.append(("output", (spec.num_classes,)))
    return Network(spec, (h, w, c), layers, trace, seed, dtype)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(net: Network, batch: np.ndarray, training: bool = False):
    """Run the stack; returns (class probabilities, per-layer caches)."""
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim != 4 or x.shape[1:] != net.input_shape:
        raise ValueError(
            f"batch shape {x.shape} does not match input shape {net.input_shape}"
        )
    caches = []
    for layer in net.layers:
        x, cache = layer.forward(x, training, net.rng)
        caches.append(cache)
    return _softmax(x.astype(np.float64)), caches


def loss_and_backward(net: Network, batch: np.ndarray, labels: np.ndarray, training: bool = True):
    """Mean categorical cross-entropy and gradients for every parameter.

    ``labels`` is one-hot (batch, num_classes). The returned gradient list
    is parallel to ``net.parameters()``.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != net.spec.num_classes:
        raise ValueError(
            f"labels shape {y.shape} does not match {net.spec.num_classes} classes"
        )
    if y.shape[0] != batch.shape[0]:
        raise ValueError("batch and labels disagree on the number of examples")

    probs, caches = forward(net, batch, training=training)
    loss = float(-(y * np.log(probs + LOSS_EPSILON)).sum() / y.shape[0])

    grad = ((probs - y) / y.shape[0]).astype(net.dtype)
    grads_reversed: list[list[np.ndarray]] = []
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        grad, layer_grads = layer.backward(grad, cache)
        grads_reversed.append(layer_grads)
    grads: list[np.ndarray] = []
    for layer_grads in reversed(grads_reversed):
        grads.extend(layer_grads)
    return loss, grads


def sgd_step(net: Network, grads: list[np.ndarray], learning_rate: float) -> None:
    """Plain gradient descent: w -= lr * g, in place."""
    params = net.parameters()
    if len(params) != len(grads):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for p, g in zip(params, grads):
        p -= np.asarray(learning_rate, dtype=p.dtype) * g.astype(p.dtype)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.01
    epochs: int = 18
    seed: int = 0

    def steps_per_epoch(self, dataset_size: int) -> int:
        return dataset_size // self.batch_size


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    step_losses: list[float] = field(default_factory=list)
    step_accuracies: list[float] = field(default_factory=list)


def train_epoch(
    net: Network,
    dataset: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    epoch: int = 0,
) -> EpochMetrics:
    """One epoch of SGD: a seeded shuffle, then floor(N / batch) full batches.

    The shuffle derives from (cfg.seed, epoch), so a fixed configuration
    replays the identical trajectory. Reported loss/accuracy average the
    training-mode forward passes of the epoch's steps.
    """
    x, y = dataset
    n = x.shape[0]
    if cfg.batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {cfg.batch_size!r}")
    steps = cfg.steps_per_epoch(n)
    if steps < 1:
        raise ValueError(
            f"dataset of {n} examples is smaller than one batch of {cfg.batch_size}"
        )
    perm = np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), int(epoch)])
    ).permutation(n)

    metrics = EpochMetrics(0.0, 0.0)
    true_cls = np.argmax(y, axis=1)
    for step in range(steps):
        pick = perm[step * cfg.batch_size : (step + 1) * cfg.batch_size]
        loss, grads = loss_and_backward(net, x[pick], y[pick])
        sgd_step(net, grads, cfg.learning_rate)
        probs, _ = forward(net, x[pick], training=False)
        acc = float((probs.argmax(axis=1) == true_cls[pick]).mean())
        metrics.step_losses.append(loss)
        metrics.step_accuracies.append(acc)
    metrics.loss = float(np.mean(metrics.step_losses))
    metrics.accuracy = float(np.mean(metrics.step_accuracies))
    return metrics


@dataclass
class EvalMetrics:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray  # (num_classes, num_classes) int64, rows = true class


def metrics_from_confusion(confusion: np.ndarray) -> EvalMetrics:
    """Accuracy and macro F1 from a confusion matrix (rows = true class).

    Per-class F1 is 0 when the class appears in neither predictions nor
    truth; macro F1 averages over all classes regardless.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    k = confusion.shape[0]
    if confusion.shape != (k, k) or confusion.sum() < 1:
        raise ValueError(f"confusion must be square and nonempty, got {confusion.shape}")
    accuracy = float(np.trace(confusion) / confusion.sum())
    f1 = np.zeros(k, dtype=np.float64)
    for c in range(k):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1[c] = (2.0 * tp / denom) if denom > 0 else 0.0
    return EvalMetrics(accuracy, float(f1.mean()), confusion)


def evaluate(
    net: Network, dataset: tuple[np.ndarray, np.ndarray], batch_size: int = 64
) -> EvalMetrics:
    """Inference-mode metrics: accuracy, macro F1, and a confusion matrix."""
    x, y = dataset
    if x.shape[0] < 1:
        raise ValueError("cannot evaluate an empty dataset")
    k = net.spec.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    true_cls = np.argmax(y, axis=1)
    for start in range(0, x.shape[0], batch_size):
        stop = min(start + batch_size, x.shape[0])
        probs, _ = forward(net, x[start:stop], training=False)
        pred = probs.argmax(axis=1)
        np.add.at(confusion, (true_cls[start:stop], pred), 1)
    return metrics_from_confusion(confusion)


def save_checkpoint(path, net: Network) -> None:
    """Binary checkpoint: magic, JSON header, then float32 LE parameters in
    layer order. Parameter shapes are reproducible from the header alone."""
    header = {
        "conv_filters": list(net.spec.conv_filters),
        "kernel": list(net.spec.kernel),
        "pool": list(net.spec.pool),
        "fc_widths": list(net.spec.fc_widths),
        "num_classes": net.spec.num_classes,
        "dropout_rate": net.spec.dropout_rate,
        "padding": net.spec.padding,
        "input_shape": list(net.input_shape),
        "seed": net.seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(_CHECKPOINT_MAGIC)] != _CHECKPOINT_MAGIC:
        raise ParseError("not a network checkpoint file")
    if len(raw) < len(_CHECKPOINT_MAGIC) + 4:
        raise ParseError("checkpoint is truncated")
    (blob_len,) = struct.unpack_from("<I", raw, len(_CHECKPOINT_MAGIC))
    off = len(_CHECKPOINT_MAGIC) + 4
    if off + blob_len > len(raw):
        raise ParseError("checkpoint is truncated")
    try:
        header = json.loads(raw[off : off + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}") from None
    off += blob_len

    spec = NetworkSpec(
        conv_filters=tuple(header["conv_filters"]),
        kernel=tuple(header["kernel"]),
        pool=tuple(header["pool"]),
        fc_widths=tuple(header["fc_widths"]),
        num_classes=int(header["num_classes"]),
        dropout_rate=float(header["dropout_rate"]),
        padding=header["padding"],
    )
    net = build_network(spec, tuple(header["input_shape"]), seed=header.get("seed", 0), dtype=dtype)
    for p in net.parameters():
        if off + 4 * p.size > len(raw):
            raise ParseError("checkpoint is truncated")
        vals = np.frombuffer(raw, dtype="<f4", count=p.size, offset=off)
        p[...] = vals.reshape(p.shape).astype(p.dtype)
        off += 4 * p.size
    if off != len(raw):
        raise ParseError("checkpoint has trailing bytes")
    return net


def save_training_log(path, rows) -> None:
    """CSV of per-step training metrics: epoch,step,loss,accuracy."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("epoch,step,loss,accuracy\n")
        for epoch, step, loss, acc in rows:
            fh.write(f"{epoch},{step},{loss:.9g},{acc:.9g}\n")
