"""On-disk formats for networks and datasets.

Model directory::

    model.json                 manifest (see FORMAT.md)
    layer<i>_weights.bin       int8, (out_ch, fan_in), row-major
    layer<i>_thresholds.bin    little-endian int32, (out_ch, n_thresholds)

Dataset file (``.qfd``), all little-endian::

    header   4s magic b"QFD1", u32 count, u32 h, u32 w, u32 ch
    images   int8[count * h * w * ch]   (N, H, W, C) row-major
    labels   u16[count]
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

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
)
from .errors import LoadError, StructuralError

MANIFEST = "model.json"
FORMAT_NAME = "qnnfault-model"
FORMAT_VERSION = 1

DATASET_MAGIC = b"QFD1"
_HEADER = struct.Struct("<4sIIII")

_WEIGHT_DTYPE = np.dtype("int8")
_THRESH_DTYPE = np.dtype("<i4")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_blob(path: Path, arr: np.ndarray, dtype: np.dtype) -> dict:
    data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    path.write_bytes(data)
    return {"file": path.name, "dtype": dtype.str, "shape": list(arr.shape), "sha256": _sha256(data)}


def _read_blob(root: Path, desc: dict, where: str) -> np.ndarray:
    path = root / desc["file"]
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"{where}: cannot read {path}: {exc}") from None
    if _sha256(data) != desc["sha256"]:
        raise LoadError(f"{where}: checksum mismatch for {desc['file']}")
    dtype = np.dtype(desc["dtype"])
    shape = tuple(desc["shape"])
    if len(data) != dtype.itemsize * int(np.prod(shape)):
        raise LoadError(f"{where}: {desc['file']} has {len(data)} bytes, expected shape {shape}")
    return np.frombuffer(data, dtype=dtype).reshape(shape)


def save_model(net: QuantizedNetwork, directory) -> Path:
    """Write ``net`` as a manifest plus binary blobs; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(net.layers):
        desc: dict = {"kind": layer.kind}
        if layer.kind == MAXPOOL:
            desc.update(size=layer.kernel, stride=layer.stride)
        else:
            if layer.kind == CONV:
                desc.update(kernel=layer.kernel, stride=layer.stride, pad=layer.pad)
            desc.update(in_ch=layer.in_ch, out_ch=layer.out_ch)
            desc["weights"] = _write_blob(root / f"layer{i}_weights.bin", layer.weights, _WEIGHT_DTYPE)
            if layer.thresholds is not None:
                if np.abs(layer.thresholds).max(initial=0) >= 2**31:
                    raise StructuralError(f"layer {i}: thresholds exceed int32")
                desc["thresholds"] = _write_blob(
                    root / f"layer{i}_thresholds.bin", layer.thresholds, _THRESH_DTYPE
                )
        layers.append(desc)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": net.name,
        "quant": {"weight_bits": net.quant.weight_bits, "act_bits": net.quant.act_bits},
        "input_shape": list(net.input_shape),
        "input_quant": {"bits": net.input_quant.bits, "shift": net.input_quant.shift},
        "num_classes": net.num_classes,
        "layers": layers,
        "metadata": net.metadata,
    }
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _manifest_path(path) -> Path:
    p = Path(path)
    return p / MANIFEST if p.is_dir() else p


def load_model(path) -> QuantizedNetwork:
    """Load and fully validate a network from a manifest file or its directory."""
    mpath = _manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read manifest {mpath}: {exc}") from None
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise LoadError(
            f"{mpath}: unrecognized format {manifest.get('format')!r} "
            f"version {manifest.get('version')!r}"
        )
    root = mpath.parent
    layers = []
    try:
        for i, desc in enumerate(manifest["layers"]):
            kind = desc["kind"]
            where = f"layer {i}"
            if kind == MAXPOOL:
                layers.append(Layer.maxpool(desc.get("size", 2), desc.get("stride", 2)))
                continue
            weights = _read_blob(root, desc["weights"], where)
            thresholds = None
            if "thresholds" in desc:
                thresholds = _read_blob(root, desc["thresholds"], where).astype(np.int64)
            if weights.shape[0] != desc["out_ch"]:
                raise LoadError(f"{where}: out_ch {desc['out_ch']} != weight rows {weights.shape[0]}")
            if kind == CONV:
                layer = Layer.conv(weights, thresholds, desc["kernel"], desc.get("stride", 1), desc.get("pad", 0))
            elif kind == FC:
                layer = Layer.fc(weights, thresholds)
            else:
                raise LoadError(f"{where}: unknown kind {kind!r}")
            if layer.in_ch != desc["in_ch"]:
                raise LoadError(f"{where}: in_ch {desc['in_ch']} disagrees with weight shape")
            layers.append(layer)
        net = QuantizedNetwork(
            quant=QuantSpec(**manifest["quant"]),
            input_shape=tuple(manifest["input_shape"]),
            layers=tuple(layers),
            input_quant=InputQuant(**manifest.get("input_quant", {})),
            name=manifest.get("name", mpath.parent.name),
            metadata=manifest.get("metadata", {}),
        )
    except StructuralError as exc:
        raise LoadError(f"{mpath}: {exc}") from None
    except (KeyError, TypeError) as exc:
        raise LoadError(f"{mpath}: malformed manifest ({exc!r})") from None
    if net.num_classes != manifest.get("num_classes", net.num_classes):
        raise LoadError(f"{mpath}: num_classes disagrees with head width")
    return net


def model_digest(net: QuantizedNetwork) -> str:
    """Content hash of a network's arithmetic (weights, thresholds, shapes)."""
    h = hashlib.sha256()
    h.update(json.dumps([net.quant.weight_bits, net.quant.act_bits, list(net.input_shape),
                         net.input_quant.bits, net.input_quant.shift]).encode())
    for layer in net.layers:
        h.update(json.dumps([layer.kind, layer.kernel, layer.stride, layer.pad]).encode())
        for arr in (layer.weights, layer.thresholds):
            h.update(b"-" if arr is None else np.ascontiguousarray(arr, dtype=np.int64).tobytes())
    return h.hexdigest()


def save_dataset(ds: LabeledDataset, path) -> Path:
    path = Path(path)
    n, h, w, c = ds.images.shape
    if len(ds) and (ds.labels.max() > 0xFFFF or ds.labels.min() < 0):
        raise StructuralError("labels must fit in u16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, n, h, w, c))
        fh.write(np.ascontiguousarray(ds.images, dtype=np.int8).tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())
    return path


def load_dataset(path, limit: int | None = None) -> LabeledDataset:
    """Read a ``.qfd`` dataset; the byte count must match the header exactly.

    Images stay raw int8; networks encode them with their own
    :class:`~qnnfault.core.InputQuant` at inference time.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read dataset {path}: {exc}") from None
    if len(data) < _HEADER.size:
        raise LoadError(f"{path}: truncated header")
    magic, n, h, w, c = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise LoadError(f"{path}: bad magic {magic!r}")
    img_bytes = n * h * w * c
    expected = _HEADER.size + img_bytes + 2 * n
    if len(data) != expected:
        raise LoadError(
            f"{path}: header declares {n} images of {h}x{w}x{c} ({expected} bytes), "
            f"file has {len(data)} bytes"
        )
    off = _HEADER.size
    images = np.frombuffer(data, dtype=np.int8, count=img_bytes, offset=off).reshape(n, h, w, c)
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=off + img_bytes).astype(np.int64)
    return LabeledDataset(images, labels, path.stem).subset(limit)


def dataset_digest(ds: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images).tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype=np.int64).tobytes())
    return h.hexdigest()
