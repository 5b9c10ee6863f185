"""Bit-accurate inference for FINN-style quantized networks.

Every conv/fc layer is a matrix-vector-threshold unit: an integer dot product
per output channel followed by a multi-threshold activation that counts how
many of the channel's thresholds the accumulator strictly exceeds.  The last
fc layer is the classifier head; it has no thresholds and its raw
accumulators are the class scores.

Layout conventions (shared with the on-disk format):

* feature maps are ``(H, W, C)``; batches are ``(N, H, W, C)``
* conv weights are ``(out_ch, k * k * in_ch)``, each row a flattened
  ``(k, k, in_ch)`` kernel (row, column, input channel)
* an fc layer after a conv/pool layer sees the ``(H, W, C)`` map flattened
  in row-major order
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import StructuralError, UsageError

CONV = "conv"
FC = "fc"
MAXPOOL = "maxpool"
LAYER_KINDS = (CONV, FC, MAXPOOL)

# rows of the im2col matrix processed per matmul; bounds peak memory
_CHUNK_ROWS = 1 << 16


def symmetric_levels(bits: int) -> np.ndarray:
    """Legal integer levels for a ``bits``-wide symmetric quantizer.

    One bit gives the binary set {-1, +1}; wider quantizers use the narrow
    symmetric range, e.g. 2 bits -> {-1, 0, 1}, 4 bits -> {-7 .. 7}.
    """
    if bits < 1:
        raise UsageError(f"bit width must be >= 1, got {bits}")
    if bits == 1:
        return np.array([-1, 1], dtype=np.int64)
    m = (1 << (bits - 1)) - 1
    return np.arange(-m, m + 1, dtype=np.int64)


@dataclass(frozen=True)
class QuantSpec:
    """Weight and activation precision, the ``WwAa`` of a network."""

    weight_bits: int
    act_bits: int

    def __post_init__(self):
        if self.weight_bits < 1 or self.act_bits < 1:
            raise UsageError(f"bit widths must be >= 1: {self}")
        if self.weight_bits > 8:
            raise UsageError("weights are stored as int8; weight_bits must be <= 8")

    @property
    def label(self) -> str:
        return f"W{self.weight_bits}A{self.act_bits}"

    @property
    def weight_levels(self) -> np.ndarray:
        return symmetric_levels(self.weight_bits)

    @property
    def act_levels(self) -> np.ndarray:
        return symmetric_levels(self.act_bits)

    @property
    def weight_max(self) -> int:
        return int(self.weight_levels[-1])

    @property
    def act_max(self) -> int:
        return int(self.act_levels[-1])

    @property
    def n_thresholds(self) -> int:
        return len(self.act_levels) - 1


@dataclass(frozen=True)
class InputQuant:
    """Maps raw int8 image bytes to first-layer input levels.

    ``level = clip(raw >> shift, -m, m)`` with ``m = 2**(bits-1) - 1``; for
    ``bits == 1`` the rule degenerates to ``+1 if raw >= 0 else -1``.  The
    default (8 bits, no shift) feeds the signed bytes through unchanged
    except that -128 saturates to -127.
    """

    bits: int = 8
    shift: int = 0

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise UsageError(f"input bits must be in 1..8, got {self.bits}")
        if not 0 <= self.shift < 8:
            raise UsageError(f"input shift must be in 0..7, got {self.shift}")

    @property
    def max_level(self) -> int:
        return 1 if self.bits == 1 else (1 << (self.bits - 1)) - 1

    def encode(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw).astype(np.int64)
        if self.bits == 1:
            return np.where(raw >= 0, 1, -1).astype(np.int8)
        m = self.max_level
        return np.clip(raw >> self.shift, -m, m).astype(np.int8)


def _frozen(a: np.ndarray | None, dtype) -> np.ndarray | None:
    if a is None:
        return None
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Layer:
    """One layer of a quantized network.

    ``weights`` is ``(out_ch, fan_in)`` for conv and fc layers.  ``thresholds``
    is ``(out_ch, n_thresholds)``, ascending per row, or ``None`` for the
    classifier head.  For max-pool layers ``kernel``/``stride`` give the
    pooling window.
    """

    kind: str
    weights: np.ndarray | None = None
    thresholds: np.ndarray | None = None
    kernel: int = 1
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise StructuralError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "weights", _frozen(self.weights, np.int8))
        object.__setattr__(self, "thresholds", _frozen(self.thresholds, np.int64))
        if self.kind == MAXPOOL:
            if self.weights is not None or self.thresholds is not None:
                raise StructuralError("maxpool layers carry no weights or thresholds")
            return
        if self.weights is None or self.weights.ndim != 2:
            raise StructuralError(f"{self.kind} layer needs a 2-D weight matrix")
        if self.kind == FC and (self.kernel != 1 or self.stride != 1 or self.pad != 0):
            raise StructuralError("fc layers have no kernel/stride/pad")
        if self.kind == CONV and self.weights.shape[1] % (self.kernel * self.kernel):
            raise StructuralError(
                f"conv fan-in {self.weights.shape[1]} is not a multiple of k*k={self.kernel ** 2}"
            )
        if self.thresholds is not None:
            if self.thresholds.ndim != 2 or self.thresholds.shape[0] != self.out_ch:
                raise StructuralError(
                    f"thresholds must be (out_ch={self.out_ch}, n), got {self.thresholds.shape}"
                )

    @classmethod
    def conv(cls, weights, thresholds, kernel: int, stride: int = 1, pad: int = 0) -> "Layer":
        return cls(CONV, weights, thresholds, kernel, stride, pad)

    @classmethod
    def fc(cls, weights, thresholds=None) -> "Layer":
        return cls(FC, weights, thresholds)

    @classmethod
    def maxpool(cls, size: int = 2, stride: int = 2) -> "Layer":
        return cls(MAXPOOL, kernel=size, stride=stride)

    @property
    def has_weights(self) -> bool:
        return self.kind != MAXPOOL

    @property
    def is_head(self) -> bool:
        return self.kind == FC and self.thresholds is None

    @property
    def fan_in(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_ch(self) -> int:
        return int(self.weights.shape[0])

    @property
    def in_ch(self) -> int:
        if self.kind == CONV:
            return self.fan_in // (self.kernel * self.kernel)
        return self.fan_in

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if self.kind == FC:
            if math.prod(in_shape) != self.fan_in:
                raise StructuralError(
                    f"fc layer expects {self.fan_in} inputs, got shape {in_shape}"
                )
            return (self.out_ch,)
        if len(in_shape) != 3:
            raise StructuralError(f"{self.kind} layer needs an (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if self.kind == CONV and c != self.in_ch:
            raise StructuralError(f"conv layer expects {self.in_ch} input channels, got {c}")
        h_out = (h + 2 * self.pad - self.kernel) // self.stride + 1
        w_out = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if h_out < 1 or w_out < 1:
            raise StructuralError(f"{self.kind} window {self.kernel} does not fit input {in_shape}")
        return (h_out, w_out, self.out_ch if self.kind == CONV else c)

    def macs(self, in_shape: tuple[int, ...]) -> int:
        """Multiply-accumulate operations for one image."""
        if self.kind == MAXPOOL:
            return 0
        if self.kind == FC:
            return self.fan_in * self.out_ch
        h, w, _ = self.output_shape(in_shape)
        return h * w * self.fan_in * self.out_ch


@dataclass(frozen=True)
class AccumulatorBound:
    layer_id: int | None
    bound: int

    @property
    def th_max(self) -> int:
        return self.bound + 1


def accumulator_bound(
    layer: Layer,
    quant: QuantSpec,
    input_max: int | None = None,
    layer_id: int | None = None,
) -> AccumulatorBound:
    """Largest ``|val|`` any legal input can drive the layer's accumulator to.

    ``input_max`` is the largest input level magnitude; it defaults to the
    activation range of ``quant`` and must be given for the first layer,
    whose inputs are encoded image bytes.
    """
    if not layer.has_weights:
        raise UsageError("accumulator bounds exist only for conv and fc layers")
    if input_max is None:
        input_max = quant.act_max
    return AccumulatorBound(layer_id, quant.weight_max * input_max * layer.fan_in)


@dataclass(frozen=True, eq=False)
class QuantizedNetwork:
    """An immutable, validated quantized network.

    Construction enforces the structural invariants: shapes compose, weights
    and thresholds are legal, every hidden conv/fc layer has strictly
    ascending thresholds of the width dictated by ``quant``, and the final
    layer is a threshold-free fc head.
    """

    quant: QuantSpec
    input_shape: tuple[int, int, int]
    layers: tuple[Layer, ...]
    input_quant: InputQuant = field(default_factory=InputQuant)
    name: str = "network"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_layers(self.quant, self.input_shape, self.layers, strict=True)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_ch

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        """Input shape of every layer followed by the head output shape."""
        return layer_shapes(self.input_shape, self.layers)

    @property
    def injectable_layers(self) -> list[int]:
        """Indices of layers whose output channels can be stuck (thresholded conv/fc)."""
        return [i for i, layer in enumerate(self.layers) if layer.has_weights and not layer.is_head]

    def input_max(self, layer_id: int) -> int:
        if all(layer.kind == MAXPOOL for layer in self.layers[:layer_id]):
            return self.input_quant.max_level
        return self.quant.act_max

    def accumulator_bound(self, layer_id: int) -> AccumulatorBound:
        return accumulator_bound(
            self.layers[layer_id], self.quant, self.input_max(layer_id), layer_id
        )

    def macs(self) -> list[int]:
        shapes = self.shapes
        return [layer.macs(shapes[i]) for i, layer in enumerate(self.layers)]


def layer_shapes(input_shape, layers: Sequence[Layer]) -> list[tuple[int, ...]]:
    shapes = [tuple(input_shape)]
    for layer in layers:
        shapes.append(layer.output_shape(shapes[-1]))
    return shapes


def validate_layers(quant: QuantSpec, input_shape, layers: Sequence[Layer], strict: bool = True):
    """Raise StructuralError naming the offending layer/channel on any violation.

    ``strict`` requires strictly ascending thresholds; injected networks only
    need them non-decreasing because stuck channels repeat ``+-th_max``.
    """
    if not layers:
        raise StructuralError("network has no layers")
    if len(input_shape) != 3:
        raise StructuralError(f"input shape must be (H, W, C), got {input_shape}")
    try:
        layer_shapes(input_shape, layers)
    except StructuralError as exc:
        raise StructuralError(f"shape mismatch: {exc}") from None
    weight_levels = quant.weight_levels
    n_th = quant.n_thresholds
    for i, layer in enumerate(layers):
        last = i == len(layers) - 1
        if last and not layer.is_head:
            raise StructuralError("final layer must be an fc head without thresholds")
        if not layer.has_weights:
            continue
        if not last and layer.thresholds is None:
            raise StructuralError(f"layer {i}: only the final layer may omit thresholds")
        bad = ~np.isin(layer.weights, weight_levels)
        if bad.any():
            ch, col = np.argwhere(bad)[0]
            raise StructuralError(
                f"layer {i} channel {ch}: weight {layer.weights[ch, col]} is not a "
                f"legal {quant.weight_bits}-bit level"
            )
        if layer.thresholds is None:
            continue
        if layer.thresholds.shape[1] != n_th:
            raise StructuralError(
                f"layer {i}: {quant.label} needs {n_th} thresholds per channel, "
                f"got {layer.thresholds.shape[1]}"
            )
        steps = np.diff(layer.thresholds, axis=1)
        bad_rows = np.flatnonzero((steps <= 0).any(axis=1) if strict else (steps < 0).any(axis=1))
        if bad_rows.size:
            order = "strictly ascending" if strict else "non-decreasing"
            raise StructuralError(
                f"layer {i} channel {bad_rows[0]}: thresholds "
                f"{layer.thresholds[bad_rows[0]].tolist()} are not {order}"
            )


@dataclass(frozen=True)
class LabeledDataset:
    """Raw int8 images ``(N, H, W, C)`` with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        images = np.asarray(self.images)
        labels = np.asarray(self.labels)
        if images.ndim != 4:
            raise StructuralError(f"images must be (N, H, W, C), got {images.shape}")
        if labels.shape != (images.shape[0],):
            raise StructuralError(
                f"{images.shape[0]} images but labels have shape {labels.shape}"
            )
        object.__setattr__(self, "images", _frozen(images, np.int8))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int | None) -> "LabeledDataset":
        """First ``n`` images (all of them when ``n`` is None or too large)."""
        if n is None or n >= len(self):
            return self
        if n < 1:
            raise UsageError(f"subset size must be >= 1, got {n}")
        return LabeledDataset(self.images[:n], self.labels[:n], f"{self.name}[:{n}]")


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------


def threshold_activate(acc: np.ndarray, thresholds: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Multi-threshold activation over the channel axis (last axis of ``acc``).

    The activation of a channel is ``levels[count]`` where ``count`` is the
    number of that channel's thresholds strictly below the accumulator.
    """
    count = np.zeros(acc.shape, dtype=np.int64)
    for t in range(thresholds.shape[1]):
        count += acc > thresholds[:, t]
    return levels[count].astype(np.int8)


def _im2col(x: np.ndarray, layer: Layer) -> np.ndarray:
    k, s, p = layer.kernel, layer.stride, layer.pad
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    # (N, H', W', C, k, k) -> (N, H', W', k, k, C)
    win = win.transpose(0, 1, 2, 4, 5, 3)
    return win.reshape(win.shape[:3] + (-1,))


def _matmul(cols: np.ndarray, w_t: np.ndarray, bound: int) -> np.ndarray:
    # int32 products are exact whenever the worst-case |val| fits
    dtype = np.int32 if bound < 2**31 else np.int64
    w_t = w_t.astype(dtype)
    lead = cols.shape[:-1]
    cols = cols.reshape(-1, cols.shape[-1])
    out = np.empty((cols.shape[0], w_t.shape[1]), dtype=np.int64)
    for start in range(0, cols.shape[0], _CHUNK_ROWS):
        stop = start + _CHUNK_ROWS
        out[start:stop] = cols[start:stop].astype(dtype) @ w_t
    return out.reshape(lead + (w_t.shape[1],))


def _columns(layer: Layer, x: np.ndarray) -> np.ndarray:
    if layer.kind == FC:
        return x.reshape(x.shape[0], -1)
    if layer.kind == CONV:
        return _im2col(x, layer)
    raise UsageError("maxpool layers do not accumulate")


def accumulate(layer: Layer, x: np.ndarray) -> np.ndarray:
    """Integer accumulators of a conv/fc layer for a batch ``x``.

    Returns ``(N, H', W', out_ch)`` for conv and ``(N, out_ch)`` for fc, as
    int64.
    """
    x_max = int(np.abs(x).max(initial=0))
    w_max = int(np.abs(layer.weights).max(initial=0))
    return _matmul(_columns(layer, x), layer.weights.T, layer.fan_in * x_max * w_max)


def input_columns(layer: Layer, in_shape: tuple[int, ...], channels: Sequence[int]) -> np.ndarray:
    """Weight-matrix columns fed by the given input channels, in im2col order."""
    channels = np.asarray(channels, dtype=np.int64)
    c = in_shape[-1]
    if layer.kind == CONV:
        taps = np.arange(layer.kernel * layer.kernel)
    elif layer.kind == FC:
        taps = np.arange(math.prod(in_shape[:-1]))
    else:
        raise UsageError("maxpool layers have no weights")
    return (taps[:, None] * c + channels[None, :]).reshape(-1)


def accumulate_delta(layer: Layer, delta: np.ndarray, in_shape, channels: Sequence[int]) -> np.ndarray:
    """Change in accumulators when only ``channels`` of the input change.

    ``delta`` is ``(N, H, W, len(channels))`` (or ``(N, len(channels))``
    for a flat input) holding new-minus-old input levels.  Because the dot
    product is linear, ``accumulate(x + d) == accumulate(x) +
    accumulate_delta(d)`` exactly.
    """
    cols_idx = input_columns(layer, in_shape, channels)
    w_t = layer.weights[:, cols_idx].T
    d_max = int(np.abs(delta).max(initial=0))
    bound = len(cols_idx) * d_max * int(np.abs(layer.weights).max(initial=0))
    if layer.kind == FC:
        cols = delta.reshape(delta.shape[0], -1)
    else:
        cols = _im2col(delta, layer)
    return _matmul(cols, w_t, bound)


def maxpool(layer: Layer, x: np.ndarray) -> np.ndarray:
    k, s = layer.kernel, layer.stride
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    return win.max(axis=(-2, -1))


def _forced(net) -> dict:
    return getattr(net, "forced", None) or {}


def iter_forward(net, x: np.ndarray, start: int = 0) -> Iterator[tuple[int, np.ndarray]]:
    """Run ``net.layers[start:]`` on ``x`` (the input to layer ``start``).

    Yields ``(layer_id, output)`` for every layer; the head yields its raw
    accumulator scores.  When ``start == 0``, ``x`` is a batch of raw images
    and is encoded with the network's input quantizer first.

    ``net`` may be any object exposing ``quant``, ``input_quant`` and
    ``layers``; an optional ``forced`` mapping ``layer_id -> (channels,
    level)`` overwrites those channels after activation.
    """
    if start == 0:
        x = net.input_quant.encode(x)
    levels = net.quant.act_levels
    forced = _forced(net)
    for i in range(start, len(net.layers)):
        layer = net.layers[i]
        if layer.kind == MAXPOOL:
            x = maxpool(layer, x)
        else:
            acc = accumulate(layer, x)
            if layer.is_head:
                yield i, acc
                return
            x = threshold_activate(acc, layer.thresholds, levels)
        if i in forced:
            channels, level = forced[i]
            x = x.copy()
            x[..., list(channels)] = level
        yield i, x


def forward(net, x: np.ndarray, start: int = 0) -> np.ndarray:
    """Class scores of the head for a batch; see :func:`iter_forward`."""
    out = None
    for _, out in iter_forward(net, x, start):
        pass
    return out


def classify(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(scores, axis=-1)


def _check_images(net, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images)
    if images.shape[1:] != tuple(net.input_shape):
        raise StructuralError(
            f"images of shape {images.shape[1:]} do not match network input {net.input_shape}"
        )
    return images


def infer_batch(net, images: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Predicted class per image of an ``(N, H, W, C)`` raw int8 batch."""
    images = _check_images(net, images)
    preds = [
        classify(forward(net, images[s:s + batch_size]))
        for s in range(0, images.shape[0], batch_size)
    ]
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def infer(net, image: np.ndarray) -> int:
    """Predicted class of a single raw ``(H, W, C)`` image."""
    return int(infer_batch(net, np.asarray(image)[None])[0])


@dataclass(frozen=True)
class Evaluation:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


def _count_correct(net, images, labels) -> int:
    return int(np.count_nonzero(infer_batch(net, images) == labels))


def evaluate(net, dataset: LabeledDataset, jobs: int = 1) -> Evaluation:
    """Exact correct-classification count of ``net`` over ``dataset``.

    With ``jobs > 1`` the images are split across worker processes; the
    integer count is identical either way.
    """
    n = len(dataset)
    if n == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1:
        return Evaluation(_count_correct(net, dataset.images, dataset.labels), n)
    bounds = np.linspace(0, n, jobs + 1).astype(int)
    with ProcessPoolExecutor(jobs) as pool:
        futures = [
            pool.submit(_count_correct, net, dataset.images[a:b], dataset.labels[a:b])
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        return Evaluation(sum(f.result() for f in futures), n)


def mvtu_channel(layer: Layer, input_window: np.ndarray, channel: int, quant: QuantSpec) -> int:
    """Activation level of one output channel for one input window.

    ``input_window`` holds ``layer.fan_in`` input levels, either flat or as a
    ``(k, k, in_ch)`` patch.  Uses the strict comparison ``val > th``.
    """
    if not layer.has_weights:
        raise UsageError("mvtu_channel needs a conv or fc layer")
    window = np.asarray(input_window).reshape(-1)
    if window.size != layer.fan_in:
        raise StructuralError(f"window has {window.size} inputs, layer fan-in is {layer.fan_in}")
    if not 0 <= channel < layer.out_ch:
        raise UsageError(f"channel {channel} out of range for {layer.out_ch} channels")
    val = int(np.dot(layer.weights[channel].astype(np.int64), window.astype(np.int64)))
    if layer.thresholds is None:
        raise UsageError("the classifier head has no thresholds")
    count = sum(1 for th in layer.thresholds[channel] if val > th)
    return int(quant.act_levels[count])


# ---------------------------------------------------------------------------
# PE scheduling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Assignment of a layer's output channels to processing elements."""

    pe_count: int
    assignment: tuple[int, ...]
    layer_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(p) for p in self.assignment))
        if self.pe_count < 1:
            raise UsageError("pe_count must be >= 1")
        if any(not 0 <= p < self.pe_count for p in self.assignment):
            raise StructuralError("assignment refers to a PE outside 0..pe_count-1")

    @property
    def out_ch(self) -> int:
        return len(self.assignment)

    @property
    def folding_factor(self) -> int:
        """Channels per PE; the ceiling when the last round is ragged."""
        return -(-self.out_ch // self.pe_count)

    def groups(self) -> list[tuple[int, ...]]:
        """Channels computed by each PE, indexed by PE."""
        groups: list[list[int]] = [[] for _ in range(self.pe_count)]
        for ch, pe in enumerate(self.assignment):
            groups[pe].append(ch)
        return [tuple(g) for g in groups]

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], layer_id: int | None = None) -> "Schedule":
        channels = sorted(c for g in groups for c in g)
        if channels != list(range(len(channels))):
            raise StructuralError("groups must partition channels 0..N-1 exactly once")
        assignment = [0] * len(channels)
        for pe, group in enumerate(groups):
            for ch in group:
                assignment[ch] = pe
        return cls(len(groups), tuple(assignment), layer_id)


def default_schedule(out_ch: int, pe_count: int, layer_id: int | None = None) -> Schedule:
    """FINN's round-robin schedule: channel ``c`` runs on PE ``c mod pe_count``."""
    if out_ch < 1 or pe_count < 1:
        raise UsageError("out_ch and pe_count must be >= 1")
    if pe_count > out_ch:
        raise UsageError(f"{pe_count} PEs exceed {out_ch} channels")
    return Schedule(pe_count, tuple(c % pe_count for c in range(out_ch)), layer_id)
