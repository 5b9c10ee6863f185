"""Fault-aware assignment of output channels to processing elements.

A layer's ``N`` channels are split into ``N / f`` groups, one per PE.  If one
PE fails, every channel of its group is stuck; the accuracy left is the
matrix entry ``E[group]``.  The schedule objective is the worst case over
PEs, ``min_acc = min_g E[g]``, which we maximize.

Max-min problems of this kind are solved exactly by threshold search: the
optimum is one of the distinct matrix values, and a value ``t`` is
achievable iff the channels can be partitioned using only groups with
``E >= t``.  For pairs (``f = 2``) that test is a perfect matching in a
general graph; for larger groups it is a depth-first search over set
partitions.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Sequence

import networkx as nx

from .campaign import AccuracyMatrix, evaluate_faults
from .core import LabeledDataset, QuantizedNetwork, Schedule, default_schedule
from .errors import StructuralError, UsageError
from .injector import FaultSpec


@dataclass(frozen=True)
class SchedulingInstance:
    matrix: AccuracyMatrix
    m_acc: int | None = None

    def __post_init__(self):
        n, f = len(self.matrix.channels), self.matrix.group_size
        if f < 1 or n % f:
            raise UsageError(f"{n} channels cannot be split into groups of {f}")
        if self.m_acc is None:
            object.__setattr__(self, "m_acc", self.matrix.max() if len(self.matrix) else 0)
        elif len(self.matrix) and self.m_acc < self.matrix.max():
            raise UsageError("M_acc must be >= every matrix entry")

    @property
    def channels(self) -> tuple[int, ...]:
        return self.matrix.channels

    @property
    def folding(self) -> int:
        return self.matrix.group_size


@dataclass(frozen=True)
class ScheduleSolution:
    groups: tuple[tuple[int, ...], ...]
    min_acc: int
    optimal: bool
    worst_group: tuple[int, ...] | None = None
    protected: tuple[tuple[int, ...], ...] = ()

    def schedule(self, layer_id: int | None = None) -> Schedule:
        """PE assignment: unprotected groups first, then protected PEs."""
        return Schedule.from_groups(list(self.groups) + list(self.protected), layer_id)


def _check_partition(groups: Sequence[Sequence[int]], channels: Sequence[int], f: int):
    flat = sorted(c for g in groups for c in g)
    if flat != sorted(channels) or any(len(g) != f for g in groups):
        raise StructuralError("groups must partition the instance channels into groups of f")


def worst_case_of_groups(groups, matrix: AccuracyMatrix) -> tuple[int, tuple[int, ...]]:
    """``(min_acc, worst group)``; ties resolve to the first group given."""
    groups = [tuple(sorted(g)) for g in groups]
    _check_partition(groups, matrix.channels, matrix.group_size)
    worst = min(groups, key=lambda g: matrix[g])
    return matrix[worst], worst


def worst_case_of_schedule(schedule: Schedule, matrix: AccuracyMatrix) -> tuple[int, tuple[int, ...]]:
    return worst_case_of_groups(schedule.groups(), matrix)


def default_groups(n: int, f: int) -> list[tuple[int, ...]]:
    """Round-robin groups of channels ``0..n-1`` over ``n / f`` PEs."""
    if n % f:
        raise UsageError(f"{n} channels cannot be split into groups of {f}")
    return default_schedule(n, n // f).groups()


def combine_levels(matrices: Sequence[AccuracyMatrix]) -> AccuracyMatrix:
    """Per-group minimum over stuck levels."""
    return AccuracyMatrix.combine(matrices)


# ---------------------------------------------------------------------------
# f = 2: perfect matchings
# ---------------------------------------------------------------------------


def _pair_graph(matrix: AccuracyMatrix, threshold: int, channels) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(channels)
    keep = set(channels)
    g.add_edges_from(k for k, v in matrix.entries.items() if v >= threshold and keep.issuperset(k))
    return g


def _has_perfect_matching(g: nx.Graph) -> bool:
    if g.number_of_nodes() == 0:
        return True
    if g.number_of_nodes() % 2 or any(d == 0 for _, d in g.degree()):
        return False
    return 2 * len(nx.max_weight_matching(g, maxcardinality=True)) == g.number_of_nodes()


def _lexmin_matching(matrix: AccuracyMatrix, threshold: int) -> list[tuple[int, int]]:
    """Lexicographically smallest perfect matching using edges ``>= threshold``.

    Greedy: pair the smallest free channel with its smallest partner that
    still leaves a perfectly matchable remainder.
    """
    free = list(matrix.channels)
    groups = []
    while free:
        a = free[0]
        rest = free[1:]
        for b in rest:
            if matrix[(a, b)] < threshold:
                continue
            remaining = [c for c in rest if c != b]
            if _has_perfect_matching(_pair_graph(matrix, threshold, remaining)):
                groups.append((a, b))
                free = remaining
                break
        else:
            raise StructuralError(f"no perfect matching at threshold {threshold}")
    return groups


# ---------------------------------------------------------------------------
# f > 2: set-partition search
# ---------------------------------------------------------------------------


class _Timeout(Exception):
    pass


class _PartitionSearch:
    """Depth-first search over partitions of the channels into f-groups.

    Channels are placed in ascending order: the smallest unplaced channel
    always opens the next group, and its partners are tried in lexicographic
    order, so the first partition found is the lexicographically smallest.
    """

    def __init__(self, matrix: AccuracyMatrix, deadline: float | None):
        self.m = matrix
        self.f = matrix.group_size
        self.deadline = deadline
        self._ticks = 0

    def _tick(self):
        self._ticks += 1
        if self.deadline is not None and self._ticks % 1024 == 0 and time.monotonic() > self.deadline:
            raise _Timeout

    def feasible(self, threshold: int) -> list[tuple[int, ...]] | None:
        """Lexicographically smallest partition with every group ``>= threshold``."""
        ok = {k for k, v in self.m.entries.items() if v >= threshold}
        # every channel needs at least one admissible group
        covered = {c for k in ok for c in k}
        if covered != set(self.m.channels):
            return None
        groups: list[tuple[int, ...]] = []

        def dfs(free: tuple[int, ...]) -> bool:
            if not free:
                return True
            self._tick()
            a, rest = free[0], free[1:]
            for partners in itertools.combinations(rest, self.f - 1):
                g = (a,) + partners
                if g not in ok:
                    continue
                groups.append(g)
                pset = set(partners)
                if dfs(tuple(c for c in rest if c not in pset)):
                    return True
                groups.pop()
            return False

        return groups if dfs(tuple(self.m.channels)) else None

    def best(self, incumbent: int, ceiling: int) -> tuple[int, list[tuple[int, ...]] | None]:
        """Branch and bound for the max-min value, pruning groups ``<= incumbent``.

        Stops early once a partition reaches ``ceiling``, a known upper bound.
        The incumbent is kept on the instance so a timeout can still report it.
        """
        self.best_val, self.best_groups = incumbent, None
        groups: list[tuple[int, ...]] = []

        class _Done(Exception):
            pass

        def dfs(free: tuple[int, ...], cur: int):
            if not free:
                self.best_val, self.best_groups = cur, list(groups)
                if cur >= ceiling:
                    raise _Done
                return
            self._tick()
            a, rest = free[0], free[1:]
            for partners in itertools.combinations(rest, self.f - 1):
                g = (a,) + partners
                v = self.m.entries[g]
                if v <= self.best_val:
                    continue
                groups.append(g)
                pset = set(partners)
                dfs(tuple(c for c in rest if c not in pset), min(cur, v))
                groups.pop()

        try:
            dfs(tuple(self.m.channels), self.m.max() + 1)
        except _Done:
            pass
        return self.best_val, self.best_groups


def _upper_bound(matrix: AccuracyMatrix) -> int:
    """Every channel sits in some group, so no schedule beats its best group."""
    best = {c: None for c in matrix.channels}
    for k, v in matrix.entries.items():
        for c in k:
            if best[c] is None or v > best[c]:
                best[c] = v
    return min(best.values())


def optimal_schedule(instance: SchedulingInstance, time_budget: float | None = None) -> ScheduleSolution:
    """Partition maximizing the worst-case faulty-PE accuracy.

    Exact for any ``f``; among equally good partitions the lexicographically
    smallest (groups sorted by first channel) is returned.  If ``time_budget``
    seconds elapse first, the best partition found so far is returned with
    ``optimal=False``.
    """
    m = instance.matrix
    f = instance.folding
    channels = instance.channels
    if not channels:
        return ScheduleSolution((), instance.m_acc, True)
    if len(channels) == f:
        g = tuple(channels)
        return ScheduleSolution((g,), m[g], True, g)
    deadline = None if time_budget is None else time.monotonic() + time_budget
    ceiling = _upper_bound(m)
    values = [v for v in sorted(set(m.entries.values())) if v <= ceiling]
    search = _PartitionSearch(m, deadline)

    if f == 2:
        def feasible(t):
            return _has_perfect_matching(_pair_graph(m, t, channels))
    else:
        def feasible(t):
            return search.feasible(t) is not None

    # default groups give a valid starting point and a lower bound
    base = [tuple(channels[i] for i in g) for g in default_groups(len(channels), f)]
    lo_val, _ = worst_case_of_groups(base, m)
    best_groups = base
    lo = values.index(lo_val) if lo_val in values else 0
    hi = len(values) - 1
    optimal = True
    try:
        if f > 2:
            val, groups = search.best(lo_val, ceiling)
            if groups is not None:
                lo_val, best_groups = val, groups
            lo = hi = values.index(lo_val)
        # invariant: values[lo] is achievable
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if deadline is not None and time.monotonic() > deadline:
                raise _Timeout
            if feasible(values[mid]):
                lo = mid
            else:
                hi = mid - 1
        opt = values[lo]
        if f == 2:
            best_groups = _lexmin_matching(m, opt)
        else:
            best_groups = search.feasible(opt)
    except _Timeout:
        optimal = False
        if f == 2 and values[lo] > lo_val:
            best_groups = _lexmin_matching(m, values[lo])
        elif f > 2 and getattr(search, "best_groups", None):
            best_groups = search.best_groups
    best_groups = sorted(tuple(sorted(g)) for g in best_groups)
    val, worst = worst_case_of_groups(best_groups, m)
    return ScheduleSolution(tuple(best_groups), val, optimal, worst)


def schedule_with_replication(
    instance: SchedulingInstance, replicated: Sequence[int], time_budget: float | None = None
) -> ScheduleSolution:
    """Optimal schedule of the non-replicated channels only.

    Replicated channels go to dedicated protected PEs (a single fault there
    is masked), so they do not enter the objective.
    """
    f = instance.folding
    rep = sorted(set(replicated))
    unknown = set(rep) - set(instance.channels)
    if unknown:
        raise UsageError(f"replicated channels {sorted(unknown)} not in instance")
    if len(rep) % f:
        raise UsageError(f"{len(rep)} replicated channels do not fill whole PEs of {f}")
    protected = tuple(tuple(rep[i:i + f]) for i in range(0, len(rep), f))
    remaining = [c for c in instance.channels if c not in set(rep)]
    if not remaining:
        return ScheduleSolution((), instance.m_acc, True, None, protected)
    sub = SchedulingInstance(instance.matrix.restrict(remaining), instance.m_acc)
    sol = optimal_schedule(sub, time_budget)
    return ScheduleSolution(sol.groups, sol.min_acc, sol.optimal, sol.worst_group, protected)


# ---------------------------------------------------------------------------
# Brute force (reference oracle)
# ---------------------------------------------------------------------------


def all_partitions(channels: Sequence[int], f: int):
    """Every partition of ``channels`` into unordered groups of ``f``."""
    channels = tuple(channels)
    if not channels:
        yield []
        return
    a, rest = channels[0], channels[1:]
    for partners in itertools.combinations(rest, f - 1):
        pset = set(partners)
        for tail in all_partitions(tuple(c for c in rest if c not in pset), f):
            yield [(a,) + partners] + tail


def brute_force_schedule(instance: SchedulingInstance) -> tuple[int, list[tuple[int, ...]]]:
    """Exhaustive max-min over all partitions; first maximum in enumeration order."""
    m = instance.matrix
    best_val, best = None, None
    for part in all_partitions(instance.channels, instance.folding):
        v = min(m[g] for g in part)
        if best_val is None or v > best_val:
            best_val, best = v, part
    return best_val, best


# ---------------------------------------------------------------------------
# Folding-factor sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldingPoint:
    folding: int
    pe_count: int
    counts: tuple[int, ...]
    total: int

    @property
    def average(self) -> float:
        return sum(self.counts) / len(self.counts) / self.total

    @property
    def minimum(self) -> float:
        return min(self.counts) / self.total

    @property
    def maximum(self) -> float:
        return max(self.counts) / self.total


def folding_sweep(
    net: QuantizedNetwork,
    layer: int,
    dataset: LabeledDataset,
    foldings: Sequence[int],
    level: int,
    jobs: int = 1,
) -> list[FoldingPoint]:
    """Accuracy with each PE of the default schedule faulty, per folding factor."""
    out_ch = net.layers[layer].out_ch
    points = []
    for f in foldings:
        if f < 1 or out_ch % f:
            raise UsageError(f"folding factor {f} does not divide {out_ch} channels")
        sched = default_schedule(out_ch, out_ch // f, layer)
        faults = [FaultSpec(layer, g, level) for g in sched.groups()]
        res = evaluate_faults(net, dataset, faults, jobs=jobs)
        points.append(FoldingPoint(f, sched.pe_count, tuple(res[x] for x in faults), len(dataset)))
    return points
