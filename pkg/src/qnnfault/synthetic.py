"""Deterministic synthetic networks and datasets for desk-scale experiments.

Trained CNV/LFC weights are not part of this package, so experiments run on
pseudo-random networks with the same layer structure.  Thresholds are
calibrated against the network's own accumulator statistics so that
activations are balanced and faults have visible, varied effects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CONV,
    FC,
    MAXPOOL,
    InputQuant,
    LabeledDataset,
    Layer,
    QuantizedNetwork,
    QuantSpec,
    accumulate,
    accumulator_bound,
    forward,
    infer_batch,
    maxpool,
    threshold_activate,
)
from .errors import UsageError

THRESHOLD_RULES = ("calibrated", "uniform")


def cnv_topology(num_classes: int = 10) -> list[dict]:
    """FINN CNV: 6 conv (3x3, no padding), 2 max-pools, 2 hidden fc, fc head."""
    return [
        {"kind": CONV, "out": 64, "kernel": 3},
        {"kind": CONV, "out": 64, "kernel": 3},
        {"kind": MAXPOOL},
        {"kind": CONV, "out": 128, "kernel": 3},
        {"kind": CONV, "out": 128, "kernel": 3},
        {"kind": MAXPOOL},
        {"kind": CONV, "out": 256, "kernel": 3},
        {"kind": CONV, "out": 256, "kernel": 3},
        {"kind": FC, "out": 512},
        {"kind": FC, "out": 512},
        {"kind": FC, "out": num_classes},
    ]


CNV_INPUT_SHAPE = (32, 32, 3)


def desk_topology(num_classes: int = 10) -> list[dict]:
    """Small CNV-like net for laptop-scale campaigns (input 12x12x3)."""
    return [
        {"kind": CONV, "out": 16, "kernel": 3},
        {"kind": CONV, "out": 32, "kernel": 3},
        {"kind": MAXPOOL},
        {"kind": CONV, "out": 32, "kernel": 3},
        {"kind": FC, "out": 32},
        {"kind": FC, "out": num_classes},
    ]


DESK_INPUT_SHAPE = (12, 12, 3)


def tiny_topology(num_classes: int = 4) -> list[dict]:
    """A few channels per layer; small enough for exhaustive checks (input 6x6x2)."""
    return [
        {"kind": CONV, "out": 4, "kernel": 3},
        {"kind": MAXPOOL},
        {"kind": FC, "out": 6},
        {"kind": FC, "out": num_classes},
    ]


TINY_INPUT_SHAPE = (6, 6, 2)


@dataclass
class SyntheticModelSpec:
    seed: int
    topology: list[dict]
    quant: QuantSpec
    input_shape: tuple[int, int, int]
    input_quant: InputQuant = field(default_factory=InputQuant)
    threshold_rule: str = "calibrated"
    calibration_images: int = 64
    # per-channel jitter of the calibrated quantile targets
    threshold_spread: float = 0.2
    name: str = "synthetic"

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "topology": self.topology,
            "quant": [self.quant.weight_bits, self.quant.act_bits],
            "input_shape": list(self.input_shape),
            "input_quant": [self.input_quant.bits, self.input_quant.shift],
            "threshold_rule": self.threshold_rule,
            "calibration_images": self.calibration_images,
            "threshold_spread": self.threshold_spread,
        }


def random_images(rng: np.random.Generator, n: int, shape) -> np.ndarray:
    return rng.integers(-128, 128, size=(n, *shape), dtype=np.int64).astype(np.int8)


def _strictly_ascending(th: np.ndarray, bound: int) -> np.ndarray:
    th = np.clip(th, -bound, bound)
    for i in range(1, th.shape[1]):
        th[:, i] = np.maximum(th[:, i], th[:, i - 1] + 1)
    # push back under the bound from the top if the ramp overflowed it
    for i in range(th.shape[1] - 1, -1, -1):
        cap = bound - (th.shape[1] - 1 - i)
        th[:, i] = np.minimum(th[:, i], cap)
    return th


def _calibrated_thresholds(rng, acc: np.ndarray, n: int, spread: float, bound: int) -> np.ndarray:
    samples = acc.reshape(-1, acc.shape[-1])
    out_ch = samples.shape[1]
    targets = np.arange(1, n + 1) / (n + 1)
    jitter = rng.uniform(-spread, spread, size=(out_ch, 1))
    q = np.clip(targets[None, :] + jitter, 0.02, 0.98)
    th = np.empty((out_ch, n), dtype=np.int64)
    for c in range(out_ch):
        th[c] = np.floor(np.quantile(samples[:, c], q[c])).astype(np.int64)
    return _strictly_ascending(th, bound)


def _uniform_thresholds(rng, out_ch: int, n: int, bound: int) -> np.ndarray:
    th = np.empty((out_ch, n), dtype=np.int64)
    for c in range(out_ch):
        th[c] = np.sort(rng.choice(2 * bound + 1, size=n, replace=False)) - bound
    return th


def _build(spec: SyntheticModelSpec, rng: np.random.Generator) -> QuantizedNetwork:
    quant = spec.quant
    wlev = quant.weight_levels
    alev = quant.act_levels
    n_th = quant.n_thresholds
    x = spec.input_quant.encode(random_images(rng, spec.calibration_images, spec.input_shape))
    shape = tuple(spec.input_shape)
    layers: list[Layer] = []
    topo = spec.topology
    for i, desc in enumerate(topo):
        kind = desc["kind"]
        if kind == MAXPOOL:
            layer = Layer.maxpool(desc.get("size", 2), desc.get("stride", 2))
            layers.append(layer)
            shape = layer.output_shape(shape)
            x = maxpool(layer, x)
            continue
        out = desc["out"]
        if kind == CONV:
            k = desc.get("kernel", 3)
            fan_in = k * k * shape[2]
        elif kind == FC:
            fan_in = int(np.prod(shape))
        else:
            raise UsageError(f"unknown layer kind {kind!r} in topology")
        weights = rng.choice(wlev, size=(out, fan_in))
        if kind == CONV:
            layer = Layer.conv(weights, None, k, desc.get("stride", 1), desc.get("pad", 0))
        else:
            layer = Layer.fc(weights, None)
        if i == len(topo) - 1:
            if kind != FC:
                raise UsageError("the last topology entry must be the fc head")
            layers.append(layer)
            break
        input_max = spec.input_quant.max_level if not layers or all(
            l.kind == MAXPOOL for l in layers) else quant.act_max
        bound = accumulator_bound(layer, quant, input_max).bound
        acc = accumulate(layer, x)
        if spec.threshold_rule == "calibrated":
            th = _calibrated_thresholds(rng, acc, n_th, spec.threshold_spread, bound)
        elif spec.threshold_rule == "uniform":
            th = _uniform_thresholds(rng, out, n_th, bound)
        else:
            raise UsageError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        layer = Layer(layer.kind, layer.weights, th, layer.kernel, layer.stride, layer.pad)
        layers.append(layer)
        shape = layer.output_shape(shape)
        x = threshold_activate(acc, th, alev)
    return QuantizedNetwork(
        quant=quant,
        input_shape=tuple(spec.input_shape),
        layers=tuple(layers),
        input_quant=spec.input_quant,
        name=spec.name,
        metadata={"synthetic": spec.to_record()},
    )


def generate_synthetic(spec: SyntheticModelSpec, max_tries: int = 10) -> QuantizedNetwork:
    """Build a valid pseudo-random network; identical specs give identical nets.

    If the result classifies every calibration image identically the build is
    repeated from a derived seed, up to ``max_tries`` times.
    """
    if spec.threshold_rule not in THRESHOLD_RULES:
        raise UsageError(f"threshold_rule must be one of {THRESHOLD_RULES}")
    probe = None
    for attempt in range(max_tries):
        rng = np.random.default_rng([spec.seed, attempt])
        net = _build(spec, rng)
        if probe is None:
            probe = random_images(np.random.default_rng([spec.seed, 7919]), 64, spec.input_shape)
        if len(np.unique(infer_batch(net, probe))) > 1:
            if attempt:
                net.metadata["synthetic"]["attempt"] = attempt
            return net
    raise UsageError(f"no non-degenerate network after {max_tries} attempts for seed {spec.seed}")


def make_dataset(
    net,
    n: int,
    seed: int = 0,
    label_noise: float = 0.2,
    name: str = "synthetic",
    pool: int = 1,
) -> LabeledDataset:
    """Random images labelled by ``net`` itself, with a fraction relabelled.

    The fault-free network therefore scores about ``1 - label_noise``, and a
    fault can move accuracy both down and (by chance) up, as with a trained
    network on a real test set.

    With ``pool > 1``, ``n * pool`` candidates are drawn and the ``n`` with
    the widest top-1 score margin are kept (in draw order).  Random images
    sit close to decision boundaries, so every channel looks critical; a
    trained net classifies most of its test set with some margin, and the
    pooled draw mimics that.
    """
    if not 0 <= label_noise < 1:
        raise UsageError("label_noise must be in [0, 1)")
    if pool < 1:
        raise UsageError("pool must be >= 1")
    rng = np.random.default_rng([seed, n] if pool == 1 else [seed, n, pool])
    images = random_images(rng, n * pool, net.input_shape)
    scores = np.concatenate([forward(net, images[i:i + 1000]) for i in range(0, len(images), 1000)])
    labels = np.argmax(scores, axis=1).astype(np.int64)
    if pool > 1:
        top2 = np.sort(scores, axis=1)[:, -2:]
        margin = top2[:, 1] - top2[:, 0]
        keep = np.sort(np.argsort(-margin, kind="stable")[:n])
        images, labels = images[keep], labels[keep]
    flip = rng.random(n) < label_noise
    k = net.num_classes
    if k > 1:
        labels[flip] = (labels[flip] + rng.integers(1, k, size=int(flip.sum()))) % k
    return LabeledDataset(images, labels, name)


def synthetic_network(kind: str, quant: QuantSpec, seed: int = 0, **kw) -> QuantizedNetwork:
    """Shortcut for the preset topologies: ``"tiny"``, ``"desk"`` or ``"cnv"``."""
    presets = {
        "tiny": (tiny_topology, TINY_INPUT_SHAPE),
        "desk": (desk_topology, DESK_INPUT_SHAPE),
        "cnv": (cnv_topology, CNV_INPUT_SHAPE),
    }
    if kind not in presets:
        raise UsageError(f"unknown preset {kind!r}; choose from {sorted(presets)}")
    topo_fn, shape = presets[kind]
    num_classes = kw.pop("num_classes", None)
    topo = topo_fn() if num_classes is None else topo_fn(num_classes)
    spec = SyntheticModelSpec(seed, topo, quant, shape, name=f"{kind}-{quant.label}", **kw)
    return generate_synthetic(spec)
