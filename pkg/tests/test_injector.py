import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from qnnfault.core import QuantSpec, infer_batch, iter_forward
from qnnfault.errors import UsageError
from qnnfault.injector import (
    FaultSpec,
    all_single_faults,
    check_fault,
    force_channel,
    inject,
    stuck_thresholds,
    verify_all,
    verify_injection_equivalence,
)


def test_stuck_threshold_vectors():
    t = 9
    assert stuck_thresholds(-1, QuantSpec(1, 1).act_levels, t).tolist() == [9]
    assert stuck_thresholds(1, QuantSpec(1, 1).act_levels, t).tolist() == [-9]
    lv = QuantSpec(2, 2).act_levels
    assert stuck_thresholds(0, lv, t).tolist() == [-9, 9]
    assert stuck_thresholds(1, lv, t).tolist() == [-9, -9]
    assert stuck_thresholds(-1, lv, t).tolist() == [9, 9]
    v = stuck_thresholds(2, QuantSpec(3, 3).act_levels, t)
    assert v.tolist() == [-9] * 5 + [9]


def test_inject_rewrites_only_faulty_thresholds(tiny_nets):
    net = tiny_nets[(2, 2)]
    f = FaultSpec(0, (1, 3), 0)
    bad = inject(net, f)
    th_max = net.accumulator_bound(0).th_max
    for i, (a, b) in enumerate(zip(net.layers, bad.layers)):
        if a.weights is not None:
            assert np.array_equal(a.weights, b.weights)
        if i != 0:
            assert a is b or np.array_equal(a.thresholds, b.thresholds)
    th = bad.layers[0].thresholds
    assert th[[1, 3]].tolist() == [[-th_max, th_max]] * 2
    assert np.array_equal(th[[0, 2]], net.layers[0].thresholds[[0, 2]])


def test_idempotent(tiny_nets, tiny_data):
    net, ds = tiny_nets[(2, 2)], tiny_data[(2, 2)]
    f = FaultSpec.single(2, 4, 1)
    once, twice = inject(net, f), inject(inject(net, f), f)
    for a, b in zip(once.layers, twice.layers):
        if a.thresholds is not None:
            assert np.array_equal(a.thresholds, b.thresholds)
    assert np.array_equal(infer_batch(once, ds.images), infer_batch(twice, ds.images))


def test_illegal_faults(tiny_nets):
    net = tiny_nets[(1, 1)]
    with pytest.raises(UsageError):
        check_fault(net, FaultSpec.single(0, 0, 0))  # level 0 does not exist at a=1
    with pytest.raises(UsageError):
        check_fault(net, FaultSpec.single(1, 0, 1))  # maxpool
    with pytest.raises(UsageError):
        check_fault(net, FaultSpec.single(3, 0, 1))  # head
    with pytest.raises(UsageError):
        check_fault(net, FaultSpec.single(0, 4, 1))  # only 4 channels
    with pytest.raises(UsageError):
        inject(net, FaultSpec.single(0, 0, 2))


def test_fault_record_roundtrip():
    f = FaultSpec(3, (5, 1, 5), -1)
    assert f.channels == (1, 5)
    assert FaultSpec.from_record(f.to_record()) == f
    assert str(f) == "L3[1,5]s@-1"


@pytest.mark.parametrize("wa", [(1, 1), (2, 2), (4, 4)])
def test_whole_channel_and_locality(tiny_nets, tiny_data, wa):
    net, ds = tiny_nets[wa], tiny_data[wa]
    for f in [FaultSpec.single(0, 2, int(net.quant.act_levels[-1])),
              FaultSpec.single(2, 1, int(net.quant.act_levels[0]))]:
        clean = dict(iter_forward(net, ds.images))
        bad = dict(iter_forward(inject(net, f), ds.images))
        for i in range(f.layer):
            assert np.array_equal(clean[i], bad[i])
        out = bad[f.layer]
        assert np.all(out[..., list(f.channels)] == f.level)
        others = [c for c in range(out.shape[-1]) if c not in f.channels]
        assert np.array_equal(out[..., others], clean[f.layer][..., others])


@pytest.mark.parametrize("wa", [(1, 1), (1, 2), (2, 2), (4, 4)])
def test_equivalence_every_fault(tiny_nets, tiny_data, wa):
    net, ds = tiny_nets[wa], tiny_data[wa]
    for f in all_single_faults(net):
        rep = verify_injection_equivalence(net, f, ds)
        assert rep, f"{f}: {rep.mismatches}"
        assert rep.images == len(ds)


def test_forced_matches_scalar_reference(tiny_nets, tiny_data):
    net, ds = tiny_nets[(2, 2)], tiny_data[(2, 2)]
    f = FaultSpec(0, (0, 2), 1)
    got = infer_batch(force_channel(net, f), ds.images[:20])
    want = [reference.classify(reference.forward(net, im, {0: (f.channels, f.level)}))
            for im in ds.images[:20]]
    assert got.tolist() == want


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_multi_channel_equivalence(tiny_nets, tiny_data, data):
    wa = data.draw(st.sampled_from(sorted(tiny_nets)))
    net, ds = tiny_nets[wa], tiny_data[wa]
    layer = data.draw(st.sampled_from(net.injectable_layers))
    n = net.layers[layer].out_ch
    chans = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))
    level = data.draw(st.sampled_from(net.quant.act_levels.tolist()))
    assert verify_injection_equivalence(net, FaultSpec(layer, tuple(chans), level), ds.subset(40))


def test_all_single_faults_count(tiny_nets):
    net = tiny_nets[(2, 2)]
    assert len(all_single_faults(net)) == (4 + 6) * 3
    assert len(all_single_faults(tiny_nets[(1, 1)])) == (4 + 6) * 2


def test_verify_all_matches_single_fault_check(tiny_nets, tiny_data):
    net, ds = tiny_nets[(2, 2)], tiny_data[(2, 2)]
    faults = all_single_faults(net)
    batch = verify_all(net, ds, faults)
    assert [r.fault for r in batch] == faults
    for r, f in zip(batch, faults):
        assert r.mismatches == verify_injection_equivalence(net, f, ds).mismatches == []


def test_verify_all_catches_a_wrong_injection(tiny_nets, tiny_data, monkeypatch):
    import qnnfault.injector as inj

    net, ds = tiny_nets[(2, 2)], tiny_data[(2, 2)]
    real = inj.stuck_thresholds
    # stick every fault one level too high
    monkeypatch.setattr(inj, "stuck_thresholds", lambda v, levels, t: real(min(v + 1, levels[-1]), levels, t))
    reports = verify_all(net, ds, all_single_faults(net, levels=[-1]))
    assert any(not r for r in reports)
