"""Binary tensor container, PGM previews, and checkpoint files.

Container layout (all integers little-endian):

    magic   4 bytes  "C2C1"
    version u16      (currently 1)
    element u8       0 = float32, 1 = complex64 (interleaved float32 pairs),
                     2 = boolean byte
    rank    u8
    dims    rank x u32
    payload row-major (channel-major for stacks)

Arrays are canonicalized on write (float -> float32, complex -> complex64,
bool -> bool); round trips of canonical-dtype arrays are bit exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

__all__ = [
    "write_tensor",
    "read_tensor",
    "write_pgm",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"C2C1"
VERSION = 1
_CODES = {0: np.float32, 1: np.complex64, 2: np.bool_}
MAX_RANK = 8
MAX_ELEMENTS = 1 << 32


class TensorFormatError(ValueError):
    """Malformed or truncated tensor container."""


def _canonical(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        return arr, 2
    if np.issubdtype(arr.dtype, np.complexfloating):
        return arr.astype(np.complex64), 1
    if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float32), 0
    raise TypeError(f"unsupported dtype {arr.dtype}")


def tensor_bytes(arr):
    """Serialize an array to one container record."""
    arr, code = _canonical(arr)
    if arr.ndim > MAX_RANK:
        raise ValueError(f"rank {arr.ndim} exceeds limit {MAX_RANK}")
    if arr.size >= MAX_ELEMENTS:
        raise ValueError("tensor too large for u32 dims")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr)
    if payload.dtype.byteorder == ">":
        payload = payload.byteswap().view(payload.dtype.newbyteorder("<"))
    return header + payload.tobytes()


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(tensor_bytes(arr))


def _read_record(buf, offset=0):
    """Parse one record; returns (array, next_offset)."""
    if len(buf) - offset < 8:
        raise TensorFormatError("truncated header")
    if buf[offset : offset + 4] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[offset:offset + 4]!r}")
    version, code, rank = struct.unpack_from("<HBB", buf, offset + 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if code not in _CODES:
        raise TensorFormatError(f"unknown element code {code}")
    if rank > MAX_RANK:
        raise TensorFormatError(f"rank {rank} exceeds limit {MAX_RANK}")
    pos = offset + 8
    if len(buf) - pos < 4 * rank:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    n = 1
    for d in dims:
        n *= d
        if n >= MAX_ELEMENTS:
            raise TensorFormatError("dims overflow")
    dtype = np.dtype(_CODES[code]).newbyteorder("<")
    nbytes = n * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise TensorFormatError(
            f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=pos).reshape(dims)
    return arr.astype(_CODES[code]).copy(), pos + nbytes


def read_tensor(path):
    """Read a single-tensor file; rejects trailing bytes."""
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = _read_record(buf)
    if end != len(buf):
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after payload")
    return arr


def write_pgm(path, image, mask=None):
    """8-bit binary PGM preview, min-max scaled inside the mask.

    Lossy by design; the stored tensor is the source of truth.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM preview needs a 2-D real image")
    region = img[np.asarray(mask, dtype=bool)] if mask is not None else img
    lo, hi = float(region.min()), float(region.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((img - lo) / span, 0.0, 1.0)
    data = (scaled * 255.0 + 0.5).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def save_checkpoint(path, params):
    """Write network parameters: JSON config header + tensor records."""
    from .network import NetworkConfig  # local import to avoid a cycle

    names = [name for name, _ in params.flat()]
    names += [f"bn{i}.mean" for i in range(len(params.bn_mean))]
    names += [f"bn{i}.var" for i in range(len(params.bn_var))]
    arrays = dict(params.flat())
    for i in range(len(params.bn_mean)):
        arrays[f"bn{i}.mean"] = params.bn_mean[i]
        arrays[f"bn{i}.var"] = params.bn_var[i]
    header = {
        "config": {
            "depth": params.config.depth,
            "features": params.config.features,
            "kernel_size": params.config.kernel_size,
            "leaky_slope": params.config.leaky_slope,
            "bn_momentum": params.config.bn_momentum,
            "bn_eps": params.config.bn_eps,
        },
        "tensors": names,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for name in names:
            f.write(tensor_bytes(arrays[name]))


def load_checkpoint(path):
    from .network import NetworkConfig, NetworkParams, init_network

    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4:
        raise TensorFormatError("truncated checkpoint")
    (hlen,) = struct.unpack_from("<I", buf, 0)
    if len(buf) < 4 + hlen:
        raise TensorFormatError("truncated checkpoint header")
    header = json.loads(buf[4 : 4 + hlen].decode())
    config = NetworkConfig(**header["config"])
    params = init_network(config, np.random.default_rng(0))
    arrays = {}
    pos = 4 + hlen
    for name in header["tensors"]:
        arr, pos = _read_record(buf, pos)
        arrays[name] = arr.astype(np.float64)
    if pos != len(buf):
        raise TensorFormatError("trailing bytes after checkpoint tensors")
    for i in range(len(params.weights)):
        params.weights[i] = arrays[f"conv{i}.weight"]
        params.biases[i] = arrays[f"conv{i}.bias"]
    for i in range(len(params.bn_scale)):
        params.bn_scale[i] = arrays[f"bn{i}.scale"]
        params.bn_shift[i] = arrays[f"bn{i}.shift"]
        params.bn_mean[i] = arrays[f"bn{i}.mean"]
        params.bn_var[i] = arrays[f"bn{i}.var"]
    return params
