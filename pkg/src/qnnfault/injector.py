"""Stuck-at channel injection by run-time threshold rewriting.

A channel is forced to activation level ``v`` by rewriting its threshold
vector: the first ``r`` entries become ``-th_max`` (always exceeded) and the
rest ``+th_max`` (never reached), where ``r`` is the rank of ``v`` among the
legal levels and ``th_max`` is one more than the layer's accumulator bound.

:func:`force_channel` is an independent oracle that bypasses the arithmetic
entirely and overwrites the channel's output map with the stuck level.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    LabeledDataset,
    Layer,
    QuantizedNetwork,
    classify,
    forward,
    infer_batch,
    iter_forward,
    validate_layers,
)
from .errors import UsageError


@dataclass(frozen=True, order=True)
class FaultSpec:
    """One injection: ``channels`` of ``layer`` stuck at activation ``level``."""

    layer: int
    channels: tuple[int, ...]
    level: int

    def __post_init__(self):
        chans = tuple(sorted({int(c) for c in self.channels}))
        if not chans:
            raise UsageError("a fault needs at least one channel")
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "layer", int(self.layer))
        object.__setattr__(self, "level", int(self.level))

    @classmethod
    def single(cls, layer: int, channel: int, level: int) -> "FaultSpec":
        return cls(layer, (channel,), level)

    def to_record(self) -> dict:
        return {"layer": self.layer, "channels": list(self.channels), "level": self.level}

    @classmethod
    def from_record(cls, rec: dict) -> "FaultSpec":
        return cls(rec["layer"], tuple(rec["channels"]), rec["level"])

    @property
    def key(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    def __str__(self):
        chans = ",".join(map(str, self.channels))
        return f"L{self.layer}[{chans}]s@{self.level}"


def _base(net) -> QuantizedNetwork:
    return getattr(net, "base", net)


def check_fault(net, fault: FaultSpec) -> None:
    """Raise UsageError unless ``fault`` can be injected into ``net``."""
    base = _base(net)
    if fault.layer not in base.injectable_layers:
        raise UsageError(
            f"layer {fault.layer} is not an injectable conv/fc layer "
            f"(injectable: {base.injectable_layers})"
        )
    out_ch = base.layers[fault.layer].out_ch
    if fault.channels[0] < 0 or fault.channels[-1] >= out_ch:
        raise UsageError(f"channels {fault.channels} outside 0..{out_ch - 1}")
    levels = base.quant.act_levels
    if fault.level not in levels:
        raise UsageError(
            f"stuck level {fault.level} is not a legal {base.quant.label} activation "
            f"level {levels.tolist()}"
        )


def stuck_thresholds(level: int, levels: np.ndarray, th_max: int) -> np.ndarray:
    """Threshold vector that pins a channel at ``level`` for any reachable input."""
    rank = int(np.flatnonzero(levels == level)[0])
    n = len(levels) - 1
    return np.array([-th_max] * rank + [th_max] * (n - rank), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class InjectedNetwork:
    """A base network with some channels' thresholds rewritten.

    Weights are shared with the base; only the thresholds of faulty channels
    differ.  Exposes the same attributes the inference routines read.
    """

    base: QuantizedNetwork
    faults: tuple[FaultSpec, ...]
    layers: tuple[Layer, ...]

    @property
    def quant(self):
        return self.base.quant

    @property
    def input_quant(self):
        return self.base.input_quant

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def name(self):
        return self.base.name

    @property
    def fault(self) -> FaultSpec:
        return self.faults[-1]


def inject(net, fault: FaultSpec) -> InjectedNetwork:
    """Return ``net`` with ``fault`` realized by threshold rewriting.

    ``net`` may itself be an :class:`InjectedNetwork`; faults accumulate and
    re-injecting an existing fault is a no-op.
    """
    check_fault(net, fault)
    base = _base(net)
    th_max = base.accumulator_bound(fault.layer).th_max
    layers = list(net.layers)
    layer = layers[fault.layer]
    th = np.array(layer.thresholds, dtype=np.int64)
    th[list(fault.channels)] = stuck_thresholds(fault.level, base.quant.act_levels, th_max)
    layers[fault.layer] = replace(layer, thresholds=th)
    validate_layers(base.quant, base.input_shape, layers, strict=False)
    faults = getattr(net, "faults", ())
    if fault not in faults:
        faults = faults + (fault,)
    return InjectedNetwork(base, faults, tuple(layers))


@dataclass(frozen=True, eq=False)
class ForcedNetwork:
    """Oracle evaluator: faulty channels' outputs are overwritten, not computed."""

    base: QuantizedNetwork
    fault: FaultSpec
    forced: dict = field(default_factory=dict)

    @property
    def quant(self):
        return self.base.quant

    @property
    def input_quant(self):
        return self.base.input_quant

    @property
    def input_shape(self):
        return self.base.input_shape

    @property
    def layers(self):
        return self.base.layers


def force_channel(net: QuantizedNetwork, fault: FaultSpec) -> ForcedNetwork:
    check_fault(net, fault)
    base = _base(net)
    return ForcedNetwork(base, fault, {fault.layer: (fault.channels, fault.level)})


@dataclass
class EquivalenceReport:
    fault: FaultSpec
    images: int
    mismatches: list[int]

    def __bool__(self) -> bool:
        return not self.mismatches


def verify_injection_equivalence(
    net: QuantizedNetwork, fault: FaultSpec, dataset: LabeledDataset
) -> EquivalenceReport:
    """Compare per-image classes of threshold injection and forced output.

    The report is truthy when every image classifies identically; otherwise
    ``mismatches`` lists the offending image indices.
    """
    a = infer_batch(inject(net, fault), dataset.images)
    b = infer_batch(force_channel(net, fault), dataset.images)
    return EquivalenceReport(fault, len(dataset), np.flatnonzero(a != b).tolist())


def verify_all(net: QuantizedNetwork, dataset: LabeledDataset, faults: Sequence[FaultSpec]) -> list[EquivalenceReport]:
    """:func:`verify_injection_equivalence` for many faults at once.

    Layers before the faulty one are untouched by either mechanism, so their
    output is computed once per layer and both mechanisms run from there.
    """
    prefix: dict[int, np.ndarray] = {}
    reports = []
    for fault in faults:
        check_fault(net, fault)
        layer = fault.layer
        if layer not in prefix:
            if layer == 0:
                prefix[0] = dataset.images
            else:
                for i, y in iter_forward(net, dataset.images):
                    if i == layer - 1:
                        prefix[layer] = y
                        break
        x = prefix[layer]
        a = classify(forward(inject(net, fault), x, start=layer))
        b = classify(forward(force_channel(net, fault), x, start=layer))
        reports.append(EquivalenceReport(fault, len(dataset), np.flatnonzero(a != b).tolist()))
    return reports


def all_single_faults(net: QuantizedNetwork, levels=None) -> list[FaultSpec]:
    """Every (layer, channel, level) single-channel fault, in plan order."""
    levels = net.quant.act_levels.tolist() if levels is None else list(levels)
    return [
        FaultSpec.single(i, c, v)
        for i in net.injectable_layers
        for c in range(net.layers[i].out_ch)
        for v in levels
    ]
