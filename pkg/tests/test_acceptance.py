"""Acceptance suite.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion together with the measured values.  Run just
this file with ``pytest tests/test_acceptance.py``.
"""
import itertools
import math
import os
import signal
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from qnnfault.campaign import (
    AccuracyMatrix,
    build_accuracy_matrix,
    plan_pe_combinations,
    plan_whole_channel,
    run_campaign,
)
from qnnfault.cli import main
from qnnfault.core import QuantSpec
from qnnfault.injector import all_single_faults, verify_all
from qnnfault.replication import (
    CostPoint,
    OpsProfile,
    apply_replication,
    dominates,
    full_tmr_plan,
    pareto_frontier,
    plan_from_counts,
    plan_replication,
    protected_campaign,
    worst_case_drop,
)
from qnnfault.scheduler import (
    SchedulingInstance,
    brute_force_schedule,
    combine_levels,
    default_groups,
    optimal_schedule,
    worst_case_of_groups,
)
from qnnfault.synthetic import make_dataset, synthetic_network

PRECISIONS = [(1, 1), (1, 2), (2, 2), (4, 4)]


def label(wa):
    return f"W{wa[0]}A{wa[1]}"


@pytest.fixture(scope="module")
def desk_runs():
    """Whole-channel campaigns on the desk net, 1000 images, every precision."""
    runs = {}
    for wa in PRECISIONS:
        net = synthetic_network("desk", QuantSpec(*wa), seed=0)
        ds = make_dataset(net, 1000, seed=1, pool=5, label_noise=0.15)
        t0 = time.perf_counter()
        res = run_campaign(plan_whole_channel(net), net, ds)
        runs[wa] = (net, ds, res, time.perf_counter() - t0)
    return runs


# -- 1 -----------------------------------------------------------------------

@pytest.mark.criterion(1, "threshold injection equals forced output, every fault, 4 precisions, < 5 min")
def test_injection_equivalence(note):
    t0 = time.perf_counter()
    for wa in PRECISIONS:
        net = synthetic_network("desk", QuantSpec(*wa), seed=0)
        ds = make_dataset(net, 100, seed=1)
        faults = all_single_faults(net)
        reports = verify_all(net, ds, faults)
        bad = [r for r in reports if not r]
        note(f"{label(wa)}: {len(faults)} faults x {len(ds)} images, {len(bad)} mismatching faults")
        assert len(ds) >= 100 and not bad
    elapsed = time.perf_counter() - t0
    note(f"runtime {elapsed:.1f} s")
    assert elapsed < 300


# -- 2 -----------------------------------------------------------------------

@pytest.mark.criterion(2, "experiment counts 3840 / 5760 / 2016 / 635376")
@pytest.mark.parametrize("wa,levels,want", [((1, 1), 2, 3840), ((2, 2), 3, 5760)])
def test_experiment_counts(note, wa, levels, want):
    net = synthetic_network("cnv", QuantSpec(*wa), seed=0)
    chans = [layer.out_ch for layer in net.layers if layer.kind != "maxpool" and not layer.is_head]
    assert chans == [64, 64, 128, 128, 256, 256, 512, 512]
    plan = plan_whole_channel(net)
    assert len(plan.levels) == levels and plan.count == want
    note(f"{label(wa)} whole-channel: {plan.count}")
    if wa == (1, 1):
        pair = plan_pe_combinations(net, 0, 2, levels=[1])
        quad = plan_pe_combinations(net, 0, 4, levels=[1])
        assert pair.count == math.comb(64, 2) == 2016
        assert quad.count == math.comb(64, 4) == 635_376
        note(f"layer 0 pairs {pair.count}, quadruples {quad.count}")


# -- 3, 4 --------------------------------------------------------------------

def _instances():
    rng = np.random.default_rng(2024)
    shapes = [(int(rng.choice([2, 4, 6, 8, 10])), 2) for _ in range(120)]
    shapes += [(int(rng.choice([4, 8])), 4) for _ in range(40)]
    out = []
    for n, f in shapes:
        hi = int(rng.choice([3, 20, 1000]))  # small ranges force ties
        out.append((n, f, {g: int(rng.integers(0, hi)) for g in itertools.combinations(range(n), f)}, hi))
    return out


INSTANCES = _instances()


@pytest.mark.criterion(3, "optimal_schedule equals brute force, 120 x (N<=10, f=2) + 40 x (N<=8, f=4), < 2 min")
def test_scheduler_matches_brute_force(note):
    t0 = time.perf_counter()
    by_f = {2: 0, 4: 0}
    for n, f, entries, hi in INSTANCES:
        m = AccuracyMatrix(tuple(range(n)), f, entries, total=hi)
        sol = optimal_schedule(SchedulingInstance(m))
        want, _ = brute_force_schedule(SchedulingInstance(m))
        assert sol.optimal and sol.min_acc == want
        assert worst_case_of_groups(sol.groups, m)[0] == want
        by_f[f] += 1
    elapsed = time.perf_counter() - t0
    note(f"f=2: {by_f[2]} instances, f=4: {by_f[4]} instances, runtime {elapsed:.1f} s")
    assert by_f[2] >= 100 and by_f[4] >= 30 and elapsed < 120


@pytest.mark.criterion(4, "optimum dominates default; combined-level optimum <= each per-level optimum")
def test_scheduler_dominance(note):
    for n, f, entries, hi in INSTANCES:
        m = AccuracyMatrix(tuple(range(n)), f, entries, total=hi)
        sol = optimal_schedule(SchedulingInstance(m))
        assert sol.min_acc >= worst_case_of_groups(default_groups(n, f), m)[0]
    rng = np.random.default_rng(7)
    for _ in range(60):
        n, f = int(rng.choice([4, 6, 8])), 2
        per_level = [AccuracyMatrix(tuple(range(n)), f,
                                    {g: int(rng.integers(0, 50)) for g in itertools.combinations(range(n), f)},
                                    total=50) for _ in range(int(rng.integers(2, 4)))]
        combined = optimal_schedule(SchedulingInstance(combine_levels(per_level))).min_acc
        assert all(combined <= optimal_schedule(SchedulingInstance(m)).min_acc for m in per_level)
    note(f"{len(INSTANCES)} random instances, 60 random multi-level instances")


@pytest.mark.criterion(4, "optimum dominates default; combined-level optimum <= each per-level optimum")
def test_scheduler_dominance_on_campaign(tiny_nets, tiny_data, note):
    net, ds = tiny_nets[(2, 2)], tiny_data[(2, 2)]
    res = run_campaign(plan_pe_combinations(net, 0, 2), net, ds)
    mats = [build_accuracy_matrix(res, level=v) for v in res.plan.levels]
    opts = []
    for m in mats:
        sol = optimal_schedule(SchedulingInstance(m))
        assert sol.min_acc >= worst_case_of_groups(default_groups(len(m.channels), 2), m)[0]
        opts.append(sol.min_acc)
    combined = optimal_schedule(SchedulingInstance(combine_levels(mats))).min_acc
    assert combined <= min(opts)
    note(f"tiny W2A2 layer 0: per-level optima {opts}, combined {combined}")


# -- 5 -----------------------------------------------------------------------

@pytest.mark.criterion(5, "replication guarantee on desk net (1000 images), overhead monotone, full TMR = 200%")
def test_replication_guarantee(desk_runs, note):
    net, ds, res, _ = desk_runs[(2, 2)]
    assert len(ds) == 1000
    weighted = [layer for layer in net.layers if layer.kind != "maxpool"]
    assert len(net.layers) <= 6 and max(layer.out_ch for layer in weighted) <= 32
    ops = OpsProfile.from_network(net)
    everything = {i: tuple(range(n)) for i, n in ops.layer_channels.items()}
    note(f"W2A2 unprotected worst drop {float(worst_case_drop(res)):.1f} points")
    prev = None
    for t in (0.5, 1, 2):
        plan = plan_replication(res, t, ops)
        again = protected_campaign(apply_replication(net, plan), res.plan, ds)
        drop = worst_case_drop(again)
        assert drop <= Fraction(str(t))
        if plan.channels != everything:
            assert plan.ops_overhead < 200
        if prev is not None:
            assert plan.ops_overhead <= prev
        prev = plan.ops_overhead
        note(f"t={t}: {sum(map(len, plan.channels.values()))} channels triplicated, "
             f"overhead {float(plan.ops_overhead):.2f}%, protected worst drop {float(drop):.1f}")
    assert full_tmr_plan(ops).ops_overhead == 200


# -- 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6, "CNV W1A1 t=2 overhead 49.87% within 2 points")
def test_cnv_overhead_reconstruction(note):
    # per-layer MACs from the CNV hyper-parameters, worked out by hand
    ops = OpsProfile(
        {0: 30 * 30 * 27 * 64, 1: 28 * 28 * 576 * 64, 2: 12 * 12 * 576 * 128, 3: 10 * 10 * 1152 * 128,
         4: 3 * 3 * 1152 * 256, 5: 2304 * 256, 6: 256 * 512, 7: 512 * 512, 8: 512 * 10},
        {0: 64, 1: 64, 2: 128, 3: 128, 4: 256, 5: 256, 6: 512, 7: 512, 8: 10},
    )
    assert ops.total == 59_461_376
    plan = plan_from_counts((2, 24, 35, 9, 0, 0, 0, 0), range(8), ops, t=2)
    got = float(plan.ops_overhead)
    note(f"computed {got:.3f}% vs 49.87% (head MACs in the denominator)")
    assert abs(got - 49.87) <= 2


# -- 7 -----------------------------------------------------------------------

@pytest.mark.criterion(7, "Pareto frontier equals O(n^2) oracle on 60 clouds, sorted, non-dominated")
def test_pareto_against_oracle(note):
    rng = np.random.default_rng(99)
    sizes = []
    for k in range(60):
        n = int(rng.integers(1, 80))
        grid = int(rng.choice([5, 50, 10_000]))  # coarse grids give duplicates and ties
        pts = [CostPoint(f"p{i}", float(rng.integers(0, grid)), float(rng.integers(0, grid))) for i in range(n)]
        front = pareto_frontier(pts)
        want = [p for p in pts if not any(dominates(q, p) for q in pts)]
        assert sorted(map(id, front)) == sorted(map(id, want))
        keys = [(p.hardware_cost, p.worst_case_error) for p in front]
        assert keys == sorted(keys)
        assert not any(dominates(a, b) for a in front for b in front)
        sizes.append(len(front))
    note(f"60 clouds, frontier sizes {min(sizes)}..{max(sizes)}")


# -- 8 -----------------------------------------------------------------------

def _cli(*args) -> list[str]:
    return [sys.executable, "-m", "qnnfault", *map(str, args)]


@pytest.mark.criterion(8, "killed-and-resumed campaign gives byte-identical summary; --jobs invariant")
def test_kill_and_resume(tmp_path, note):
    model, data = tmp_path / "m", tmp_path / "d.qfd"
    assert main(["gen-model", "--preset", "desk", "--precision", "W4A4", "--seed", "0", "--out", str(model),
                 "--dataset-out", str(data), "--images", "200", "--pool", "3"]) == 0
    base = ["campaign", "--model", model, "--dataset", data]
    subprocess.run(_cli(*base, "--out", tmp_path / "full"), check=True, capture_output=True)
    total = 1680

    out = tmp_path / "killed"
    log = out / "results.jsonl"
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    proc = subprocess.Popen(_cli(*base, "--out", out), stderr=subprocess.DEVNULL, env=env)
    done = 0
    deadline = time.monotonic() + 300
    while proc.poll() is None and time.monotonic() < deadline:
        if log.exists():
            done = log.read_text().count('"type":"result"')
            if done >= total // 2:
                break
        time.sleep(0.05)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    assert not (out / "summary.csv").exists(), "campaign finished before it could be killed"
    subprocess.run(_cli(*base, "--out", out, "--resume"), check=True, capture_output=True)
    a, b = (tmp_path / "full" / "summary.csv").read_bytes(), (out / "summary.csv").read_bytes()
    note(f"killed after {done}/{total} results, resumed; summaries identical: {a == b}")
    assert a == b
    assert (tmp_path / "full" / "results.csv").read_bytes() == (out / "results.csv").read_bytes()


@pytest.mark.criterion(8, "killed-and-resumed campaign gives byte-identical summary; --jobs invariant")
def test_jobs_invariance(tmp_path, note):
    model, data = tmp_path / "m", tmp_path / "d.qfd"
    assert main(["gen-model", "--preset", "desk", "--precision", "W2A2", "--seed", "3", "--out", str(model),
                 "--dataset-out", str(data), "--images", "150"]) == 0
    base = ["campaign", "--model", model, "--dataset", data]
    for jobs in (1, 2):
        assert main([str(a) for a in base] + ["--out", str(tmp_path / f"j{jobs}"), "--jobs", str(jobs)]) == 0
    for name in ("summary.csv", "results.csv", "table.csv"):
        assert (tmp_path / "j1" / name).read_bytes() == (tmp_path / "j2" / name).read_bytes()
    note("jobs=1 and jobs=2 give identical summary, results and table CSVs")


# -- 9 -----------------------------------------------------------------------

@pytest.mark.criterion(9, "desk whole-channel campaign, 1000 images, all layers and levels, < 10 min")
def test_desk_throughput(desk_runs, note):
    for wa, (net, ds, res, seconds) in desk_runs.items():
        assert res.complete and len(ds) == 1000
        note(f"{label(wa)}: {len(res.counts)} experiments in {seconds:.1f} s")
        assert seconds < 600


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
