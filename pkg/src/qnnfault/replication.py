"""Selective channel triplication and its cost.

Channels whose single stuck-at fault costs more than ``t`` accuracy points
(worst level) are triplicated; a majority vote over three replicas masks any
single fault, so the protected network's worst single-fault drop is at most
``t``.  Overhead is counted in multiply-accumulate operations, and hardware
cost scales each MAC by the LUT estimate ``1.6 * w * a``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .campaign import WHOLE_CHANNEL, CampaignPlan, CampaignResult, evaluate_faults
from .core import FC, LabeledDataset, QuantizedNetwork, QuantSpec, evaluate
from .errors import LoadError, StructuralError, UsageError
from .injector import FaultSpec, inject

LUT_PER_MAC_BIT2 = Fraction(8, 5)  # 1.6 LUTs per (weight bit x activation bit)


def _exact(t) -> Fraction:
    return Fraction(str(t)) if isinstance(t, float) else Fraction(t)


@dataclass(frozen=True)
class OpsProfile:
    """Per-layer MAC counts for one inference (all conv/fc layers, head included)."""

    layer_ops: dict
    layer_channels: dict
    layer_kinds: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.layer_ops) != set(self.layer_channels):
            raise StructuralError("ops and channel maps must cover the same layers")
        for layer, ops in self.layer_ops.items():
            if ops <= 0 or self.layer_channels[layer] <= 0:
                raise StructuralError(f"layer {layer}: ops and channels must be positive")

    @classmethod
    def from_network(cls, net: QuantizedNetwork) -> "OpsProfile":
        macs = net.macs()
        idx = [i for i, layer in enumerate(net.layers) if layer.has_weights]
        return cls(
            {i: macs[i] for i in idx},
            {i: net.layers[i].out_ch for i in idx},
            {i: net.layers[i].kind for i in idx},
        )

    @property
    def total(self) -> int:
        return sum(self.layer_ops.values())

    def channel_ops(self, layer: int) -> Fraction:
        return Fraction(self.layer_ops[layer], self.layer_channels[layer])


@dataclass(frozen=True)
class ReplicationPlan:
    threshold: Fraction | None
    channels: dict  # layer -> sorted tuple of triplicated channels
    ops_overhead: Fraction  # percent
    extra_ops: Fraction

    @property
    def ops_overhead_percent(self) -> float:
        return float(self.ops_overhead)

    def counts(self) -> dict:
        return {layer: len(chans) for layer, chans in self.channels.items()}

    def protects(self, layer: int, channel: int) -> bool:
        return channel in self.channels.get(layer, ())

    def to_record(self) -> dict:
        return {
            "threshold": None if self.threshold is None else str(self.threshold),
            "channels": {str(k): list(v) for k, v in sorted(self.channels.items())},
            "ops_overhead_percent": round(float(self.ops_overhead), 6),
            "ops_overhead": str(self.ops_overhead),
            "extra_ops": str(self.extra_ops),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ReplicationPlan":
        t = rec.get("threshold")
        return cls(
            None if t is None else Fraction(t),
            {int(k): tuple(v) for k, v in rec["channels"].items()},
            Fraction(rec["ops_overhead"]),
            Fraction(rec["extra_ops"]),
        )


def save_plan(plan: ReplicationPlan, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(plan.to_record(), indent=2) + "\n")
    return path


def load_plan(path) -> ReplicationPlan:
    try:
        return ReplicationPlan.from_record(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise LoadError(f"cannot read replication plan {path}: {exc}") from None


def worst_level_counts(result: CampaignResult) -> dict[tuple[int, int], int]:
    """Minimum correct count over injected levels for each (layer, channel)."""
    if result.plan.mode != WHOLE_CHANNEL:
        raise UsageError("criticality needs a whole_channel campaign")
    missing = result.missing(limit=1)
    if missing:
        raise StructuralError(f"campaign is incomplete; missing {missing[0]}")
    worst: dict[tuple[int, int], int] = {}
    for fault, correct in result.counts.items():
        key = (fault.layer, fault.channels[0])
        worst[key] = min(worst.get(key, correct), correct)
    return worst


def critical_channels(result: CampaignResult, t) -> dict[int, tuple[int, ...]]:
    """Channels whose worst-level fault drops accuracy by more than ``t`` points.

    The comparison is exact: ``(baseline - correct) * 100 > t * total``.
    Every campaign layer appears in the result, possibly with no channels.
    """
    t = _exact(t)
    if t < 0:
        raise UsageError("drop threshold must be >= 0")
    out: dict[int, list[int]] = {layer: [] for layer in result.plan.layers}
    for (layer, ch), correct in sorted(worst_level_counts(result).items()):
        if (result.baseline - correct) * 100 > t * result.total:
            out[layer].append(ch)
    return {layer: tuple(chans) for layer, chans in out.items()}


def _plan(channels: dict, ops: OpsProfile, t) -> ReplicationPlan:
    extra = Fraction(0)
    for layer, chans in channels.items():
        if chans and layer not in ops.layer_ops:
            raise UsageError(f"ops profile has no entry for layer {layer}")
        if chans:
            if max(chans) >= ops.layer_channels[layer]:
                raise UsageError(f"layer {layer}: channel {max(chans)} out of range")
            extra += len(chans) * ops.channel_ops(layer)
    # each triplicated channel adds two more copies of its MACs
    overhead = 200 * extra / ops.total
    return ReplicationPlan(t, channels, overhead, 2 * extra)


def plan_replication(result: CampaignResult, t, ops: OpsProfile) -> ReplicationPlan:
    t = _exact(t)
    return _plan(critical_channels(result, t), ops, t)


def plan_from_channels(channels: dict, ops: OpsProfile, t=None) -> ReplicationPlan:
    """Plan for an explicit channel selection, e.g. published per-layer picks."""
    return _plan({k: tuple(sorted(v)) for k, v in channels.items()}, ops,
                 None if t is None else _exact(t))


def full_tmr_plan(ops: OpsProfile) -> ReplicationPlan:
    """Every channel of every layer triplicated: exactly 200 % overhead."""
    return _plan({k: tuple(range(c)) for k, c in ops.layer_channels.items()}, ops, None)


def plan_from_counts(counts: Sequence[int], layers: Sequence[int], ops: OpsProfile, t=None) -> ReplicationPlan:
    """Plan triplicating the first ``counts[i]`` channels of ``layers[i]``.

    Overhead depends only on how many channels per layer are triplicated, so
    a table of per-layer counts is enough to reproduce its overhead figure.
    """
    if len(counts) != len(layers):
        raise UsageError("counts and layers must align")
    return plan_from_channels({l: tuple(range(n)) for l, n in zip(layers, counts)}, ops, t)


@dataclass(frozen=True, eq=False)
class ProtectedNetwork:
    """Functional TMR model: single faults on triplicated channels are masked."""

    base: QuantizedNetwork
    plan: ReplicationPlan

    def effective_fault(self, fault: FaultSpec) -> FaultSpec | None:
        """The part of ``fault`` that survives voting, or None if fully masked."""
        exposed = tuple(c for c in fault.channels if not self.plan.protects(fault.layer, c))
        if not exposed:
            return None
        return FaultSpec(fault.layer, exposed, fault.level)

    def inject(self, fault: FaultSpec):
        eff = self.effective_fault(fault)
        return self.base if eff is None else inject(self.base, eff)

    def evaluate_fault(self, fault: FaultSpec, dataset: LabeledDataset) -> int:
        return evaluate(self.inject(fault), dataset).correct


def apply_replication(net: QuantizedNetwork, plan: ReplicationPlan) -> ProtectedNetwork:
    for layer, chans in plan.channels.items():
        if chans and (layer >= len(net.layers) or not net.layers[layer].has_weights):
            raise UsageError(f"plan protects layer {layer}, which has no channels")
        if chans and max(chans) >= net.layers[layer].out_ch:
            raise UsageError(f"plan protects channel {max(chans)} beyond layer {layer}")
    return ProtectedNetwork(net, plan)


def protected_campaign(
    protected: ProtectedNetwork, plan: CampaignPlan, dataset: LabeledDataset, jobs: int = 1
) -> CampaignResult:
    """Re-run a campaign against the protected network.

    Masked experiments evaluate the fault-free network; the rest are injected
    with only their unprotected channels.
    """
    baseline = evaluate(protected.base, dataset).correct
    effective = {f: protected.effective_fault(f) for f in plan.faults()}
    todo = sorted({e for e in effective.values() if e is not None})
    counts = evaluate_faults(protected.base, dataset, todo, jobs=jobs)
    out = {f: baseline if e is None else counts[e] for f, e in effective.items()}
    return CampaignResult(plan, baseline, len(dataset), out, {"protected": True})


def worst_case_drop(result: CampaignResult) -> Fraction:
    """Largest accuracy drop over all experiments, in points (never negative)."""
    worst = min(result.counts.values(), default=result.baseline)
    return max(Fraction(0), Fraction(100 * (result.baseline - worst), result.total))


# ---------------------------------------------------------------------------
# Hardware cost and the Pareto frontier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostPoint:
    precision: str
    hardware_cost: float
    worst_case_error: float  # percent
    threshold: float | None = None


def hardware_cost(ops: OpsProfile, plan: ReplicationPlan, quant: QuantSpec) -> Fraction:
    """LUT proxy: MACs of the protected network times ``1.6 * w * a``."""
    macs = ops.total + plan.extra_ops
    return macs * LUT_PER_MAC_BIT2 * quant.weight_bits * quant.act_bits


def cost_point(result: CampaignResult, plan: ReplicationPlan, ops: OpsProfile, quant: QuantSpec) -> CostPoint:
    """Cost and worst single-fault test error of ``plan`` applied to ``result``'s net.

    Faults on protected channels leave the fault-free accuracy; every other
    experiment keeps its measured count.
    """
    worst = result.baseline
    for fault, correct in result.counts.items():
        if all(plan.protects(fault.layer, c) for c in fault.channels):
            continue
        worst = min(worst, correct)
    error = 100 * (1 - Fraction(worst, result.total))
    return CostPoint(
        quant.label,
        float(hardware_cost(ops, plan, quant)),
        float(error),
        None if plan.threshold is None else float(plan.threshold),
    )


def cost_curve(result: CampaignResult, ops: OpsProfile, quant: QuantSpec, thresholds) -> list[CostPoint]:
    return [cost_point(result, plan_replication(result, t, ops), ops, quant) for t in thresholds]


def dominates(a: CostPoint, b: CostPoint) -> bool:
    return (
        a.hardware_cost <= b.hardware_cost
        and a.worst_case_error <= b.worst_case_error
        and (a.hardware_cost < b.hardware_cost or a.worst_case_error < b.worst_case_error)
    )


def pareto_frontier(points: Sequence[CostPoint]) -> list[CostPoint]:
    """Non-dominated points (minimizing cost and error), sorted by cost.

    Exact duplicates do not dominate each other and are all kept.
    """
    if not points:
        raise UsageError("pareto_frontier needs at least one point")
    order = sorted(points, key=lambda p: (p.hardware_cost, p.worst_case_error))
    frontier: list[CostPoint] = []
    best_err = float("inf")  # lowest error among strictly cheaper points
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and order[j].hardware_cost == order[i].hardware_cost:
            j += 1
        group = order[i:j]
        lo = group[0].worst_case_error
        if lo < best_err:
            frontier.extend(p for p in group if p.worst_case_error == lo)
            best_err = lo
        i = j
    return frontier


COST_COLUMNS = ["precision", "threshold", "cost", "worst_error"]


def write_cost_csv(points: Sequence[CostPoint], path, frontier: Sequence[CostPoint] | None = None) -> Path:
    path = Path(path)
    on = {id(p) for p in frontier} if frontier is not None else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COST_COLUMNS + (["pareto"] if on is not None else []))
        for p in points:
            row = [p.precision, "" if p.threshold is None else repr(p.threshold),
                   repr(p.hardware_cost), repr(p.worst_case_error)]
            if on is not None:
                row.append(int(id(p) in on))
            w.writerow(row)
    return path


def read_cost_csv(path) -> list[CostPoint]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(CostPoint(rec["precision"], float(rec["cost"]), float(rec["worst_error"]),
                                 float(rec["threshold"]) if rec.get("threshold") else None))
    return out


def overhead_table(plans: Sequence[ReplicationPlan], ops: OpsProfile) -> list[list[str]]:
    """Per-layer triplicated-channel counts per plan, closed by an overhead row."""
    rows = [["layer", "type", "channels"] + [
        "full" if p.threshold is None else f">={float(p.threshold):g}%" for p in plans]]
    for layer in sorted(ops.layer_ops):
        kind = ops.layer_kinds.get(layer, FC)
        rows.append([str(layer), kind, str(ops.layer_channels[layer])]
                    + [str(len(p.channels.get(layer, ()))) for p in plans])
    rows.append(["ops overhead [%]", "", ""] + [f"{float(p.ops_overhead):.2f}" for p in plans])
    return rows
