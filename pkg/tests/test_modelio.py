import hashlib
import json
import struct

import numpy as np
import pytest

from qnnfault.core import LabeledDataset, QuantSpec, infer_batch
from qnnfault.errors import LoadError
from qnnfault.modelio import (
    dataset_digest,
    load_dataset,
    load_model,
    model_digest,
    save_dataset,
    save_model,
)
from qnnfault.synthetic import SyntheticModelSpec, generate_synthetic, make_dataset, synthetic_network, tiny_topology


def _same(a, b):
    assert a.quant == b.quant and a.input_shape == b.input_shape and a.input_quant == b.input_quant
    for la, lb in zip(a.layers, b.layers):
        assert (la.kind, la.kernel, la.stride, la.pad) == (lb.kind, lb.kernel, lb.stride, lb.pad)
        for x, y in ((la.weights, lb.weights), (la.thresholds, lb.thresholds)):
            assert (x is None and y is None) or np.array_equal(x, y)


@pytest.mark.parametrize("wa", [(1, 1), (2, 2), (4, 4)])
def test_model_roundtrip(tmp_path, tiny_nets, wa):
    net = tiny_nets[wa]
    save_model(net, tmp_path / "m")
    back = load_model(tmp_path / "m")
    _same(net, back)
    assert model_digest(back) == model_digest(net)
    assert back.metadata == json.loads(json.dumps(net.metadata))
    # the manifest path works as well as its directory
    _same(net, load_model(tmp_path / "m" / "model.json"))


def test_corrupt_blob(tmp_path, tiny_nets):
    save_model(tiny_nets[(2, 2)], tmp_path)
    blob = tmp_path / "layer2_weights.bin"
    data = bytearray(blob.read_bytes())
    data[3] ^= 0x01
    blob.write_bytes(bytes(data))
    with pytest.raises(LoadError, match="layer 2"):
        load_model(tmp_path)


def test_unsorted_thresholds_rejected(tmp_path, tiny_nets):
    save_model(tiny_nets[(2, 2)], tmp_path)
    man = json.loads((tmp_path / "model.json").read_text())
    blob = tmp_path / "layer0_thresholds.bin"
    th = np.frombuffer(blob.read_bytes(), dtype="<i4").reshape(4, 2).copy()
    th[2] = th[2][::-1]
    blob.write_bytes(th.astype("<i4").tobytes())
    man["layers"][0]["thresholds"]["sha256"] = hashlib.sha256(blob.read_bytes()).hexdigest()
    (tmp_path / "model.json").write_text(json.dumps(man))
    with pytest.raises(LoadError, match="channel 2"):
        load_model(tmp_path)


def test_bad_manifest(tmp_path, tiny_nets):
    save_model(tiny_nets[(1, 1)], tmp_path)
    man = json.loads((tmp_path / "model.json").read_text())
    man["version"] = 99
    (tmp_path / "model.json").write_text(json.dumps(man))
    with pytest.raises(LoadError, match="version"):
        load_model(tmp_path)
    with pytest.raises(LoadError):
        load_model(tmp_path / "missing")


def test_dataset_roundtrip(tmp_path, tiny_nets, tiny_data):
    ds = tiny_data[(1, 1)].subset(10)
    path = save_dataset(ds, tmp_path / "d.qfd")
    head = struct.unpack("<4sIIII", path.read_bytes()[:20])
    assert head == (b"QFD1", 10, 6, 6, 2)
    back = load_dataset(path)
    assert np.array_equal(back.images, ds.images) and np.array_equal(back.labels, ds.labels)
    assert dataset_digest(back) == dataset_digest(ds)
    assert len(load_dataset(path, limit=4)) == 4


def test_truncated_dataset(tmp_path, tiny_data):
    path = save_dataset(tiny_data[(1, 1)].subset(10), tmp_path / "d.qfd")
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(LoadError, match="10 images"):
        load_dataset(path)
    path.write_bytes(b"QFD")
    with pytest.raises(LoadError):
        load_dataset(path)


def test_generate_deterministic():
    spec = SyntheticModelSpec(7, tiny_topology(), QuantSpec(2, 2), (6, 6, 2))
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert model_digest(a) == model_digest(b)
    imgs = np.random.default_rng(0).integers(-128, 128, size=(100, 6, 6, 2)).astype(np.int8)
    assert np.array_equal(infer_batch(a, imgs), infer_batch(b, imgs))
    other = generate_synthetic(SyntheticModelSpec(8, tiny_topology(), QuantSpec(2, 2), (6, 6, 2)))
    assert model_digest(other) != model_digest(a)


@pytest.mark.parametrize("rule", ["calibrated", "uniform"])
def test_generated_thresholds(rule):
    net = synthetic_network("tiny", QuantSpec(2, 2), seed=3, threshold_rule=rule)
    for i in net.injectable_layers:
        th = net.layers[i].thresholds
        assert th.shape[1] == 2
        assert np.all(np.diff(th, axis=1) > 0)
        assert np.abs(th).max() <= net.accumulator_bound(i).bound


def test_generated_not_degenerate(tiny_nets):
    imgs = np.random.default_rng(1).integers(-128, 128, size=(200, 6, 6, 2)).astype(np.int8)
    for net in tiny_nets.values():
        assert len(np.unique(infer_batch(net, imgs))) > 1


def test_make_dataset(tiny_nets):
    net = tiny_nets[(2, 2)]
    clean = make_dataset(net, 200, seed=2, label_noise=0.0)
    assert np.array_equal(infer_batch(net, clean.images), clean.labels)
    noisy = make_dataset(net, 200, seed=2, label_noise=0.3)
    acc = np.mean(infer_batch(net, noisy.images) == noisy.labels)
    assert 0.55 < acc < 0.85
    pooled = make_dataset(net, 50, seed=2, pool=4, label_noise=0.0)
    assert len(pooled) == 50
    assert dataset_digest(make_dataset(net, 50, seed=2, pool=4, label_noise=0.0)) == dataset_digest(pooled)


def test_dataset_subset_edge():
    ds = LabeledDataset(np.zeros((3, 1, 1, 1), np.int8), np.zeros(3, np.int64))
    assert len(ds.subset(None)) == 3 and len(ds.subset(10)) == 3
