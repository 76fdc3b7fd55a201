"""Checkpoint file format.

Little-endian binary: magic "DSR1", u32 format version, 32-byte SHA-256
digest of the canonical network spec, u32 record count, then per-parameter
records: u16 name length + UTF-8 name, u8 dtype tag (0=f32, 1=f64), u8
rank, u32 extents, raw values.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .data import FormatError
from .layers import NetworkSpec, layer_spec_to_dict

MAGIC = b"DSR1"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def spec_digest(spec: NetworkSpec) -> bytes:
    doc = {
        "input_shape": list(spec.input_shape),
        "layers": [layer_spec_to_dict(s) for s in spec.layers],
        "model": spec.model,
        "alpha": spec.alpha,
        "tau": spec.tau,
        "dt": spec.dt,
        "v_th_init": spec.v_th_init,
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()


def save_checkpoint(path, net):
    arrays = {name: t.data for name, t in net.parameters().items()}
    arrays.update(net.extra_state())
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(spec_digest(net.spec))
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            # note: ascontiguousarray would promote 0-d scalars to 1-d
            data = np.asarray(arr, order="C")
            tag = _DTYPE_TAGS[np.dtype(data.dtype.str.replace(">", "<"))]
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", tag, data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.astype(data.dtype.newbyteorder("<")).tobytes())


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path, net):
    """Load parameters into ``net``; the spec digest must match."""
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise FormatError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        digest = _read(f, 32, "spec digest")
        if digest != spec_digest(net.spec):
            raise FormatError("checkpoint spec digest does not match the network")
        (count,) = struct.unpack("<I", _read(f, 4, "record count"))
        params = net.parameters()
        extra = net.extra_state()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, nlen, "name").decode()
            tag, rank = struct.unpack("<BB", _read(f, 2, "dtype/rank"))
            if tag not in _TAG_DTYPES:
                raise FormatError(f"unknown dtype tag {tag}")
            shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank, "extents"))
            dtype = _TAG_DTYPES[tag]
            n_vals = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = _read(f, dtype.itemsize * n_vals, "values")
            value = np.frombuffer(raw, dtype=dtype).reshape(shape)
            if name in params:
                if params[name].shape != value.shape:
                    raise FormatError(f"shape mismatch for {name!r}")
                params[name].data = value.astype(params[name].dtype)
            elif name in extra:
                extra[name][...] = value
            else:
                raise FormatError(f"unknown parameter {name!r} in checkpoint")
    return net
