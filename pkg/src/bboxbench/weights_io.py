"""BBNW binary container for net weights and raw tensors.

Little-endian layout: magic "BBNW", version u32, a kind string ("net" or
"tensor"), then kind-specific records. Strings are u32 length + utf-8.
Arrays are u32 ndim, u32 dims, then a float64 payload.
"""

import io
import json
import struct

import numpy as np

from .layers import LAYER_TYPES
from .nets import DifferentiableNet

MAGIC = b"BBNW"
VERSION = 1


class WeightFormatError(ValueError):
    """The file is not a valid BBNW container."""


def _write_str(f, s):
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise WeightFormatError(f"truncated payload: wanted {n} bytes, got {len(data)}")
    return data


def _read_str(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n).decode("utf-8")


def _write_array(f, arr):
    arr = np.asarray(arr, dtype="<f8")
    f.write(struct.pack("<I", arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(arr.tobytes(order="C"))


def _read_array(f):
    (ndim,) = struct.unpack("<I", _read_exact(f, 4))
    shape = tuple(struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def _write_header(f, kind):
    f.write(MAGIC)
    f.write(struct.pack("<I", VERSION))
    _write_str(f, kind)


def _read_header(f):
    magic = _read_exact(f, 4)
    if magic != MAGIC:
        raise WeightFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version}")
    return _read_str(f)


def save_net(net: DifferentiableNet, path):
    with open(path, "wb") as f:
        _write_header(f, "net")
        _write_str(f, net.label)
        f.write(struct.pack("<III", *net.input_shape))
        f.write(struct.pack("<I", net.n_classes))
        f.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            _write_str(f, layer.tag)
            _write_str(f, json.dumps(layer.config(), sort_keys=True))
            params = layer.params
            f.write(struct.pack("<I", len(params)))
            for name in sorted(params):
                _write_str(f, name)
                _write_array(f, params[name])


def load_net(path) -> DifferentiableNet:
    with open(path, "rb") as f:
        kind = _read_header(f)
        if kind != "net":
            raise WeightFormatError(f"expected a net container, found {kind!r}")
        label = _read_str(f)
        input_shape = struct.unpack("<III", _read_exact(f, 12))
        (n_classes,) = struct.unpack("<I", _read_exact(f, 4))
        (n_layers,) = struct.unpack("<I", _read_exact(f, 4))
        layers = []
        for _ in range(n_layers):
            tag = _read_str(f)
            config = json.loads(_read_str(f))
            (n_params,) = struct.unpack("<I", _read_exact(f, 4))
            params = {}
            for _ in range(n_params):
                name = _read_str(f)
                params[name] = _read_array(f)
            layers.append(_build_layer(tag, config, params))
        trailing = f.read(1)
        if trailing:
            raise WeightFormatError("trailing bytes after net payload")
    return DifferentiableNet(layers, n_classes, label, input_shape)


def _build_layer(tag, config, params):
    cls = LAYER_TYPES.get(tag)
    if cls is None:
        raise WeightFormatError(f"unknown layer tag {tag!r}")
    if tag == "affine":
        return cls(params["weight"], params["bias"])
    if tag == "conv2d":
        return cls(params["kernels"], params["bias"], stride=config.get("stride", 1))
    return cls()


def save_tensor(arr, path, tag="tensor"):
    """Persist a raw array (e.g. per-iteration candidate batches)."""
    with open(path, "wb") as f:
        _write_header(f, "tensor")
        _write_str(f, tag)
        _write_array(f, arr)


def load_tensor(path):
    with open(path, "rb") as f:
        kind = _read_header(f)
        if kind != "tensor":
            raise WeightFormatError(f"expected a tensor container, found {kind!r}")
        tag = _read_str(f)
        arr = _read_array(f)
        trailing = f.read(1)
        if trailing:
            raise WeightFormatError("trailing bytes after tensor payload")
    return tag, arr
