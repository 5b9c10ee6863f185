"""Injection campaigns: planning, resumable execution, summaries and matrices.

Two campaign modes exist.  ``whole_channel`` sticks one output channel at a
time at each requested level.  ``pe_combinations`` sticks every ``f``-subset
of one layer's channels at once, which is what a single faulty PE computing
``f`` channels looks like; these results feed the scheduler.

Results are exact correct-classification counts.  The result store is an
append-only JSON-lines log (one record per experiment) that doubles as the
checkpoint: a rerun with the same plan skips every experiment already in
the log.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .core import (
    LabeledDataset,
    QuantizedNetwork,
    accumulate,
    accumulate_delta,
    classify,
    evaluate,
    forward,
    iter_forward,
    maxpool,
    threshold_activate,
)
from .errors import CheckpointMismatch, LoadError, StructuralError, UsageError
from .injector import FaultSpec, check_fault, inject
from .modelio import dataset_digest, model_digest

WHOLE_CHANNEL = "whole_channel"
PE_COMBINATIONS = "pe_combinations"
MODES = (WHOLE_CHANNEL, PE_COMBINATIONS)

_IMAGE_CHUNK = 1000


@dataclass(frozen=True)
class CampaignPlan:
    """What to inject: the ordered experiment list is derived, not stored."""

    mode: str
    layers: tuple[int, ...]
    channels: tuple[int, ...]
    levels: tuple[int, ...]
    folding: int | None = None
    network: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        if len(self.layers) != len(self.channels):
            raise StructuralError("layers and channels must align")
        if not self.levels:
            raise UsageError("a campaign needs at least one stuck level")
        if self.mode == PE_COMBINATIONS:
            if self.folding is None or self.folding < 2:
                raise UsageError("pe_combinations needs a folding factor f >= 2")
            for c in self.channels:
                if self.folding > c:
                    raise UsageError(f"folding factor {self.folding} exceeds {c} channels")

    @property
    def group_size(self) -> int:
        return 1 if self.mode == WHOLE_CHANNEL else self.folding

    @property
    def count(self) -> int:
        """Planned experiments, in closed form."""
        per_level = sum(math.comb(c, self.group_size) for c in self.channels)
        return per_level * len(self.levels)

    def faults(self) -> Iterator[FaultSpec]:
        """Experiments in canonical order: layer, channel tuple (lexicographic), level."""
        for layer, c in zip(self.layers, self.channels):
            for group in itertools.combinations(range(c), self.group_size):
                for level in self.levels:
                    yield FaultSpec(layer, group, level)

    def to_record(self) -> dict:
        return {
            "mode": self.mode,
            "layers": list(self.layers),
            "channels": list(self.channels),
            "levels": list(self.levels),
            "folding": self.folding,
            "network": self.network,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CampaignPlan":
        return cls(rec["mode"], tuple(rec["layers"]), tuple(rec["channels"]),
                   tuple(rec["levels"]), rec.get("folding"), rec.get("network", ""))

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _levels(net: QuantizedNetwork, levels) -> tuple[int, ...]:
    legal = net.quant.act_levels.tolist()
    if levels is None:
        return tuple(legal)
    levels = tuple(sorted({int(v) for v in levels}))
    bad = [v for v in levels if v not in legal]
    if bad:
        raise UsageError(f"levels {bad} are not legal {net.quant.label} activations {legal}")
    return levels


def plan_whole_channel(net: QuantizedNetwork, levels=None, layers=None) -> CampaignPlan:
    """One experiment per (layer, channel, level) over the injectable layers."""
    injectable = net.injectable_layers
    layers = injectable if layers is None else sorted(set(layers))
    for layer in layers:
        if layer not in injectable:
            raise UsageError(f"layer {layer} is not injectable (injectable: {injectable})")
    return CampaignPlan(
        WHOLE_CHANNEL,
        tuple(layers),
        tuple(net.layers[i].out_ch for i in layers),
        _levels(net, levels),
        network=model_digest(net),
    )


def plan_pe_combinations(net: QuantizedNetwork, layer: int, f: int, levels=None) -> CampaignPlan:
    """Every ``f``-subset of ``layer``'s channels stuck together, per level."""
    if layer not in net.injectable_layers:
        raise UsageError(f"layer {layer} is not injectable")
    return CampaignPlan(
        PE_COMBINATIONS,
        (layer,),
        (net.layers[layer].out_ch,),
        _levels(net, levels),
        folding=f,
        network=model_digest(net),
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


class _Engine:
    """Evaluates faults of one layer at a time, reusing the fault-free prefix.

    For the faulty layer ``L`` the accumulators do not depend on thresholds,
    so they are computed once; each experiment re-thresholds them with the
    injected threshold vectors.  Only the stuck channels can change, and
    max-pooling is channel-local, so the next weighted layer's accumulators
    are updated exactly by the contribution of those channels alone before
    the remaining layers run in full.
    """

    def __init__(self, net: QuantizedNetwork, images: np.ndarray, labels: np.ndarray):
        self.net = net
        self.images = images
        self.labels = labels
        self.shapes = net.shapes
        self._layer = None
        self._cache: list[tuple] = []

    def _chunks(self):
        for s in range(0, self.images.shape[0], _IMAGE_CHUNK):
            yield slice(s, s + _IMAGE_CHUNK)

    def _next_weighted(self, layer: int) -> int:
        i = layer + 1
        while not self.net.layers[i].has_weights:
            i += 1
        return i

    def _prefix(self, layer: int) -> list[tuple]:
        if self._layer != layer:
            nxt = self._next_weighted(layer)
            cache = []
            for sl in self._chunks():
                x = self.net.input_quant.encode(self.images[sl])
                for i, out in iter_forward(self.net, self.images[sl]):
                    if i == layer - 1:
                        x = out
                    if i == nxt - 1:
                        y = out
                        break
                acc = accumulate(self.net.layers[layer], x)
                cache.append((acc, y, accumulate(self.net.layers[nxt], y)))
            self._layer, self._cache = layer, cache
        return self._cache

    def _pool_to(self, x: np.ndarray, layer: int, nxt: int) -> np.ndarray:
        for i in range(layer + 1, nxt):
            x = maxpool(self.net.layers[i], x)
        return x

    def run(self, faults: Sequence[FaultSpec]) -> list[int]:
        levels = self.net.quant.act_levels
        out = []
        for fault in faults:
            cache = self._prefix(fault.layer)
            nxt = self._next_weighted(fault.layer)
            next_layer = self.net.layers[nxt]
            chans = list(fault.channels)
            faulty = inject(self.net, fault)
            th = faulty.layers[fault.layer].thresholds[chans]
            correct = 0
            for sl, (acc, y_base, acc_next) in zip(self._chunks(), cache):
                x = threshold_activate(acc[..., chans], th, levels)
                y = self._pool_to(x, fault.layer, nxt)
                delta = y.astype(np.int64) - y_base[..., chans]
                acc2 = acc_next + accumulate_delta(next_layer, delta, self.shapes[nxt], chans)
                if next_layer.is_head:
                    scores = acc2
                else:
                    z = threshold_activate(acc2, next_layer.thresholds, levels)
                    scores = forward(faulty, z, start=nxt + 1)
                correct += int(np.count_nonzero(classify(scores) == self.labels[sl]))
            out.append(correct)
        return out


_WORKER: dict = {}


def _init_worker(net, images, labels):
    _WORKER["engine"] = _Engine(net, images, labels)


def _run_task(faults):
    return faults, _WORKER["engine"].run(faults)


def _tasks(faults: Iterable[FaultSpec], size: int) -> list[list[FaultSpec]]:
    tasks: list[list[FaultSpec]] = []
    for fault in faults:
        if tasks and len(tasks[-1]) < size and tasks[-1][0].layer == fault.layer:
            tasks[-1].append(fault)
        else:
            tasks.append([fault])
    return tasks


def evaluate_faults(
    net: QuantizedNetwork,
    dataset: LabeledDataset,
    faults: Sequence[FaultSpec],
    jobs: int = 1,
    task_size: int = 16,
    on_result: Callable[[FaultSpec, int], None] | None = None,
    should_stop: Callable[[], bool] | None = None,
) -> dict[FaultSpec, int]:
    """Correct-classification count for each fault (threshold injection)."""
    if jobs < 1:
        raise UsageError(f"jobs must be >= 1, got {jobs}")
    for fault in faults:
        check_fault(net, fault)
    results: dict[FaultSpec, int] = {}
    tasks = _tasks(faults, task_size)

    def record(batch, counts):
        for fault, correct in zip(batch, counts):
            results[fault] = correct
            if on_result is not None:
                on_result(fault, correct)

    if jobs == 1:
        engine = _Engine(net, dataset.images, dataset.labels)
        for batch in tasks:
            if should_stop is not None and should_stop():
                break
            record(batch, engine.run(batch))
        return results
    with ProcessPoolExecutor(
        jobs, initializer=_init_worker, initargs=(net, dataset.images, dataset.labels)
    ) as pool:
        futures = [pool.submit(_run_task, batch) for batch in tasks]
        for fut in as_completed(futures):
            record(*fut.result())
            if should_stop is not None and should_stop():
                for other in futures:
                    other.cancel()
                break
    return results


@dataclass
class CampaignResult:
    plan: CampaignPlan
    baseline: int
    total: int
    counts: dict[FaultSpec, int]
    metadata: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.counts) == self.plan.count and not self.missing(limit=1)

    def missing(self, limit: int | None = None) -> list[FaultSpec]:
        out = []
        for fault in self.plan.faults():
            if fault not in self.counts:
                out.append(fault)
                if limit is not None and len(out) >= limit:
                    break
        return out

    def accuracy(self, fault: FaultSpec | None = None) -> float:
        correct = self.baseline if fault is None else self.counts[fault]
        return correct / self.total

    def ordered(self) -> list[tuple[FaultSpec, int]]:
        """Completed experiments in plan order."""
        return [(f, self.counts[f]) for f in self.plan.faults() if f in self.counts]


class _Log:
    """Append-only JSON-lines result log."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = None

    def open(self):
        self._fh = open(self.path, "a", encoding="utf-8")
        return self

    def write(self, rec: dict):
        self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _read_log(path: Path) -> list[dict]:
    lines = path.read_text(encoding="utf-8").split("\n")
    records = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            # a torn final line is the signature of a crash mid-append
            if i == len(lines) - 1 or all(not rest.strip() for rest in lines[i + 1:]):
                break
            raise LoadError(f"{path}: corrupt record on line {i + 1}") from None
    return records


def _fault_hash(fault: FaultSpec) -> str:
    return hashlib.sha1(fault.key.encode()).hexdigest()[:16]


def load_result(path) -> CampaignResult:
    """Rebuild a (possibly partial) result from its record log."""
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no result log at {path}")
    records = _read_log(path)
    if not records or records[0].get("type") != "header":
        raise LoadError(f"{path}: missing header record")
    header = records[0]
    plan = CampaignPlan.from_record(header["plan"])
    baseline = None
    total = header.get("total")
    counts: dict[FaultSpec, int] = {}
    metadata = dict(header.get("metadata", {}))
    for rec in records[1:]:
        kind = rec.get("type")
        if kind == "baseline":
            baseline, total = rec["correct"], rec["total"]
        elif kind == "result":
            fault = FaultSpec.from_record(rec)
            if rec.get("key") not in (None, _fault_hash(fault)):
                raise LoadError(f"{path}: record key does not match {fault}")
            # first record wins: replaying a log never double-counts
            counts.setdefault(fault, rec["correct"])
        elif kind == "meta":
            metadata.update(rec.get("metadata", {}))
    if baseline is None:
        raise LoadError(f"{path}: no baseline record")
    return CampaignResult(plan, baseline, total, counts, metadata)


def _header(plan: CampaignPlan, dataset: LabeledDataset, meta: dict) -> dict:
    return {
        "type": "header",
        "plan": plan.to_record(),
        "plan_hash": plan.digest,
        "dataset_hash": dataset_digest(dataset),
        "total": len(dataset),
        "metadata": meta,
    }


def save_result(result: CampaignResult, path) -> Path:
    """Write a result as a fresh record log (the format :func:`load_result` reads)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        head = {"type": "header", "plan": result.plan.to_record(), "plan_hash": result.plan.digest,
                "total": result.total, "metadata": result.metadata}
        fh.write(json.dumps(head, separators=(",", ":")) + "\n")
        fh.write(json.dumps({"type": "baseline", "correct": result.baseline, "total": result.total}) + "\n")
        for fault, correct in result.ordered():
            rec = {"type": "result", "key": _fault_hash(fault), **fault.to_record(), "correct": correct}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def run_campaign(
    plan: CampaignPlan,
    net: QuantizedNetwork,
    dataset: LabeledDataset,
    jobs: int = 1,
    checkpoint=None,
    stop_after: int | None = None,
    progress: Callable[[int, int], None] | None = None,
    metadata: dict | None = None,
) -> CampaignResult:
    """Execute ``plan`` on ``net`` over ``dataset``.

    With a ``checkpoint`` path, every completed experiment is appended to the
    log as it finishes, and a rerun resumes from whatever the log holds.  A
    log written for a different plan, network or dataset is refused.
    ``stop_after`` ends the run once that many experiments (including resumed
    ones) are done, leaving an incomplete result.  ``metadata`` is stored
    in the log header alongside the dataset name and size.
    """
    if plan.network and plan.network != model_digest(net):
        raise UsageError("plan was made for a different network")
    meta = {"dataset": dataset.name, "images": len(dataset), **(metadata or {})}
    done: dict[FaultSpec, int] = {}
    baseline = None
    log = None
    if checkpoint is not None:
        path = Path(checkpoint)
        if path.exists() and path.stat().st_size:
            records = _read_log(path)
            head = records[0] if records else {}
            if head.get("type") != "header":
                raise CheckpointMismatch(f"{path} is not a campaign log")
            if head.get("plan_hash") != plan.digest:
                raise CheckpointMismatch(f"{path} belongs to a different plan; refusing to resume")
            if head.get("dataset_hash") not in (None, dataset_digest(dataset)):
                raise CheckpointMismatch(f"{path} was run on a different dataset; refusing to resume")
            prior = load_result(path) if any(r.get("type") == "baseline" for r in records) else None
            if prior is not None:
                baseline, done = prior.baseline, dict(prior.counts)
            log = _Log(path).open()
        else:
            log = _Log(path).open()
            log.write(_header(plan, dataset, meta))
    t0 = time.perf_counter()
    try:
        if baseline is None:
            baseline = evaluate(net, dataset).correct
            if log is not None:
                log.write({"type": "baseline", "correct": baseline, "total": len(dataset)})
        todo = [f for f in plan.faults() if f not in done]
        counts = dict(done)
        n_total = plan.count

        def on_result(fault, correct):
            counts[fault] = correct
            if log is not None:
                log.write({"type": "result", "key": _fault_hash(fault), **fault.to_record(),
                           "correct": correct})
            if progress is not None:
                progress(len(counts), n_total)

        def should_stop():
            return stop_after is not None and len(counts) >= stop_after

        if not should_stop():
            evaluate_faults(net, dataset, todo, jobs=jobs, on_result=on_result, should_stop=should_stop)
        elapsed = time.perf_counter() - t0
        meta.update(jobs=jobs, resumed=len(done), seconds=round(elapsed, 3))
        result = CampaignResult(plan, baseline, len(dataset), counts, meta)
        if log is not None and result.complete:
            log.write({"type": "meta", "metadata": meta})
        return result
    finally:
        if log is not None:
            log.close()


# ---------------------------------------------------------------------------
# Summaries and exports
# ---------------------------------------------------------------------------


def _pct(correct: int, total: int) -> str:
    return f"{100 * correct / total:.2f}"


def _chan_str(channels: Sequence[int]) -> str:
    return ";".join(map(str, channels))


def _parse_chans(text: str) -> tuple[int, ...]:
    return tuple(int(c) for c in text.split(";") if c != "")


@dataclass(frozen=True)
class SummaryRow:
    """Min/max over channels for one (layer, level); ``layer`` None = whole net."""

    layer: int | None
    level: int
    total: int
    baseline: int
    min_correct: int
    min_channels: tuple[int, ...]
    min_layer: int
    max_correct: int
    max_channels: tuple[int, ...]
    max_layer: int

    @property
    def min_accuracy(self) -> float:
        return self.min_correct / self.total

    @property
    def max_accuracy(self) -> float:
        return self.max_correct / self.total

    @property
    def worst_drop(self) -> float:
        """Accuracy drop of the worst experiment in percentage points."""
        return 100 * (self.baseline - self.min_correct) / self.total


def summarize(result: CampaignResult) -> list[SummaryRow]:
    """Per-layer and whole-network min/max accuracy for every injected level.

    Values are never clamped to the baseline: a stuck channel can improve
    accuracy.  Ties resolve to the first experiment in plan order.
    """
    groups: dict[tuple, list[tuple[FaultSpec, int]]] = {}
    for fault, correct in result.ordered():
        groups.setdefault((fault.layer, fault.level), []).append((fault, correct))
        groups.setdefault((None, fault.level), []).append((fault, correct))
    rows = []
    for layer in list(result.plan.layers) + [None]:
        for level in result.plan.levels:
            exps = groups.get((layer, level))
            if not exps:
                continue
            lo = min(exps, key=lambda e: e[1])
            hi = max(exps, key=lambda e: e[1])
            rows.append(SummaryRow(layer, level, result.total, result.baseline,
                                   lo[1], lo[0].channels, lo[0].layer,
                                   hi[1], hi[0].channels, hi[0].layer))
    return rows


SUMMARY_COLUMNS = ["layer", "level", "total", "baseline_correct", "baseline_accuracy",
                   "min_correct", "min_accuracy", "min_layer", "min_channels",
                   "max_correct", "max_accuracy", "max_layer", "max_channels"]


def write_summary_csv(rows: Sequence[SummaryRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([
                "all" if r.layer is None else r.layer, r.level, r.total,
                r.baseline, _pct(r.baseline, r.total),
                r.min_correct, _pct(r.min_correct, r.total), r.min_layer, _chan_str(r.min_channels),
                r.max_correct, _pct(r.max_correct, r.total), r.max_layer, _chan_str(r.max_channels),
            ])
    return path


def read_summary_csv(path) -> list[SummaryRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(SummaryRow(
                None if rec["layer"] == "all" else int(rec["layer"]), int(rec["level"]),
                int(rec["total"]), int(rec["baseline_correct"]),
                int(rec["min_correct"]), _parse_chans(rec["min_channels"]), int(rec["min_layer"]),
                int(rec["max_correct"]), _parse_chans(rec["max_channels"]), int(rec["max_layer"]),
            ))
    return rows


def table_row(rows: Sequence[SummaryRow], label: str, levels=(-1, 0, 1)) -> list[str]:
    """Whole-network row in the layout of a per-precision stuck-at table.

    Columns: label, fault-free accuracy, then min and max per level in
    ``levels``; levels that were not injected show ``--``.
    """
    net_rows = {r.level: r for r in rows if r.layer is None}
    if not net_rows:
        raise UsageError("summary has no whole-network rows")
    any_row = next(iter(net_rows.values()))
    cells = [label, _pct(any_row.baseline, any_row.total)]
    for level in levels:
        r = net_rows.get(level)
        if r is None:
            cells += ["--", "--"]
        else:
            cells += [_pct(r.min_correct, r.total), _pct(r.max_correct, r.total)]
    return cells


RESULT_COLUMNS = ["layer", "channels", "level", "correct", "total", "accuracy"]


def write_result_csv(result: CampaignResult, path) -> Path:
    """Flat export; the first data row is the fault-free baseline (layer ``baseline``)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerow(["baseline", "", "", result.baseline, result.total,
                    f"{result.baseline / result.total:.6f}"])
        for fault, correct in result.ordered():
            w.writerow([fault.layer, _chan_str(fault.channels), fault.level, correct,
                        result.total, f"{correct / result.total:.6f}"])
    return path


def read_result_csv(path, plan: CampaignPlan) -> CampaignResult:
    baseline = total = None
    counts = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["layer"] == "baseline":
                baseline, total = int(rec["correct"]), int(rec["total"])
                continue
            fault = FaultSpec(int(rec["layer"]), _parse_chans(rec["channels"]), int(rec["level"]))
            counts[fault] = int(rec["correct"])
    if baseline is None:
        raise LoadError(f"{path}: no baseline row")
    return CampaignResult(plan, baseline, total, counts)


# ---------------------------------------------------------------------------
# Accuracy matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccuracyMatrix:
    """Correct counts when a channel group shares one faulty PE.

    ``entries`` maps every sorted ``group_size``-tuple of ``channels`` to a
    correct-classification count.  ``level`` is None for a matrix combined
    over several stuck levels.
    """

    channels: tuple[int, ...]
    group_size: int
    entries: dict
    total: int | None = None
    layer: int | None = None
    level: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(sorted(self.channels)))
        entries = {tuple(sorted(k)): int(v) for k, v in self.entries.items()}
        object.__setattr__(self, "entries", entries)
        expected = math.comb(len(self.channels), self.group_size)
        if len(entries) != expected:
            missing = next(
                (g for g in itertools.combinations(self.channels, self.group_size) if g not in entries),
                None,
            )
            raise StructuralError(
                f"matrix has {len(entries)} of {expected} groups"
                + (f"; missing {missing}" if missing else "; unexpected keys present")
            )
        if self.total is not None and any(not 0 <= v <= self.total for v in entries.values()):
            raise StructuralError("matrix entries must lie in [0, total]")

    def __getitem__(self, group) -> int:
        return self.entries[tuple(sorted(group))]

    def __len__(self) -> int:
        return len(self.entries)

    def max(self) -> int:
        return max(self.entries.values())

    def min(self) -> int:
        return min(self.entries.values())

    def restrict(self, channels: Iterable[int]) -> "AccuracyMatrix":
        keep = set(channels)
        entries = {k: v for k, v in self.entries.items() if keep.issuperset(k)}
        return AccuracyMatrix(tuple(keep), self.group_size, entries, self.total, self.layer, self.level)

    def dense(self, fill: int = -1) -> np.ndarray:
        """Symmetric ``N x N`` array over channel positions (pairs only)."""
        if self.group_size != 2:
            raise UsageError("dense view exists only for pairs")
        pos = {c: i for i, c in enumerate(self.channels)}
        out = np.full((len(self.channels),) * 2, fill, dtype=np.int64)
        for (i, j), v in self.entries.items():
            out[pos[i], pos[j]] = out[pos[j], pos[i]] = v
        return out

    @classmethod
    def from_dense(cls, e: np.ndarray, total: int | None = None, **kw) -> "AccuracyMatrix":
        n = e.shape[0]
        entries = {(i, j): int(e[i, j]) for i, j in itertools.combinations(range(n), 2)}
        return cls(tuple(range(n)), 2, entries, total, **kw)

    @classmethod
    def combine(cls, matrices: Sequence["AccuracyMatrix"]) -> "AccuracyMatrix":
        """Elementwise minimum: the worst level for every channel group."""
        if not matrices:
            raise UsageError("nothing to combine")
        first = matrices[0]
        for m in matrices[1:]:
            if m.channels != first.channels or m.group_size != first.group_size:
                raise StructuralError("matrices cover different channel groups")
        entries = {k: min(m.entries[k] for m in matrices) for k in first.entries}
        level = first.level if len(matrices) == 1 else None
        return cls(first.channels, first.group_size, entries, first.total, first.layer, level)

    def to_csv(self, path) -> Path:
        """Long form: one row per group (``channels`` joined by ';')."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channels", "correct", "total"])
            for k in sorted(self.entries):
                w.writerow([_chan_str(k), self.entries[k], "" if self.total is None else self.total])
        return path

    @classmethod
    def from_csv(cls, path, layer=None, level=None) -> "AccuracyMatrix":
        entries = {}
        total = None
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                entries[_parse_chans(rec["channels"])] = int(rec["correct"])
                if rec.get("total"):
                    total = int(rec["total"])
        if not entries:
            raise LoadError(f"{path}: empty matrix")
        sizes = {len(k) for k in entries}
        if len(sizes) != 1:
            raise LoadError(f"{path}: mixed group sizes {sorted(sizes)}")
        channels = sorted({c for k in entries for c in k})
        return cls(tuple(channels), sizes.pop(), entries, total, layer, level)

    def to_dense_csv(self, path) -> Path:
        """Heat-map grid: header of channel ids, blank diagonal."""
        e = self.dense()
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel"] + list(self.channels))
            for i, c in enumerate(self.channels):
                w.writerow([c] + ["" if i == j else int(e[i, j]) for j in range(len(self.channels))])
        return path

    @classmethod
    def from_dense_csv(cls, path, total: int | None = None) -> "AccuracyMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        channels = [int(c) for c in rows[0][1:]]
        entries = {}
        for i, row in enumerate(rows[1:]):
            for j in range(i + 1, len(channels)):
                entries[(channels[i], channels[j])] = int(row[1 + j])
        return cls(tuple(channels), 2, entries, total)


def build_accuracy_matrix(result: CampaignResult, layer: int | None = None, level: int | None = None) -> AccuracyMatrix:
    """Matrix for one layer of a pe_combinations result.

    With ``level`` None the matrix is the elementwise minimum over all
    injected levels.  A missing experiment is an error, not a gap.
    """
    plan = result.plan
    if plan.mode != PE_COMBINATIONS:
        raise UsageError("accuracy matrices come from pe_combinations campaigns")
    if layer is None:
        if len(plan.layers) != 1:
            raise UsageError("result covers several layers; pick one")
        layer = plan.layers[0]
    if layer not in plan.layers:
        raise UsageError(f"layer {layer} not in campaign")
    n = plan.channels[plan.layers.index(layer)]
    levels = plan.levels if level is None else (level,)
    mats = []
    for lv in levels:
        entries = {}
        for group in itertools.combinations(range(n), plan.folding):
            fault = FaultSpec(layer, group, lv)
            if fault not in result.counts:
                raise StructuralError(f"missing experiment {fault}")
            entries[group] = result.counts[fault]
        mats.append(AccuracyMatrix(tuple(range(n)), plan.folding, entries, result.total, layer, lv))
    return AccuracyMatrix.combine(mats)
