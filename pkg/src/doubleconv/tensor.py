"""Dense tensor primitives: seeded RNG, flat inner products, spatial translation, DTNS i/o.

All arrays are plain row-major numpy ndarrays. float64 is the default
precision; float32 is selectable per call site. Arrays are treated as
immutable values: every operation here returns a fresh array and never
mutates its inputs, so concurrent use on distinct arrays is safe.
Generators are single-owner; parallel code should take one generator per
worker via :func:`spawn_rngs`.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

DEFAULT_DTYPE = np.float64

#: DTNS dtype codes.
_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}

_DTNS_MAGIC = b"DTNS"
_DTNS_VERSION = 1


def resolve_dtype(precision):
    """Map a precision selector (32, 64, "32", "float64", dtype) to a numpy dtype."""
    if precision in (32, "32", "float32"):
        return np.float32
    if precision in (64, "64", "float64"):
        return np.float64
    dt = np.dtype(precision)
    if dt not in _DTYPE_TO_CODE:
        raise ParameterError(f"unsupported precision {precision!r}; use 32 or 64")
    return dt.type


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; identical seeds produce identical streams across runs."""
    return np.random.default_rng(seed)


def spawn_rngs(seed, n) -> list[np.random.Generator]:
    """Derive *n* independent generators from one seed (one per worker/stream)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def check_shape(shape):
    """Validate that every extent is an integer >= 1."""
    if len(shape) == 0:
        raise ShapeError("shape must have at least one extent")
    for ext in shape:
        if int(ext) != ext or ext < 1:
            raise ShapeError(f"invalid extent {ext!r} in shape {tuple(shape)}")
    return tuple(int(e) for e in shape)


def gaussian_fill(shape, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """I.i.d. standard-normal tensor of the given shape; deterministic per seed."""
    shape = check_shape(shape)
    return rng.standard_normal(shape, dtype=np.dtype(dtype))


def flat_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of the two operands flattened to vectors."""
    if a.shape != b.shape:
        raise ShapeError(f"flat_inner shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def l2_norm(a: np.ndarray) -> float:
    """sqrt(flat_inner(a, a)); zero iff the tensor is all-zero."""
    return math.sqrt(flat_inner(a, a))


def translate(w: np.ndarray, x: int, y: int) -> np.ndarray:
    """Shift content along the spatial (last two) dims with zero fill.

    ``x`` shifts along the width (last) axis and ``y`` along the height
    (second-to-last) axis, positive toward increasing index. Leading
    (channel) dimensions shift rigidly together. Cells shifted past the
    border are discarded; vacated cells are zero.
    """
    if w.ndim < 2:
        raise ShapeError("translate requires at least 2 dimensions")
    h, wd = w.shape[-2], w.shape[-1]
    out = np.zeros_like(w)
    if abs(x) >= wd or abs(y) >= h:
        return out
    src_y = slice(max(0, -y), h - max(0, y))
    dst_y = slice(max(0, y), h - max(0, -y))
    src_x = slice(max(0, -x), wd - max(0, x))
    dst_x = slice(max(0, x), wd - max(0, -x))
    out[..., dst_y, dst_x] = w[..., src_y, src_x]
    return out


def write_dtns(path, arr: np.ndarray) -> None:
    """Write a tensor in DTNS format.

    Layout: magic ``DTNS``, version byte (=1), dtype code byte (1=float32,
    2=float64), ndim byte, ndim little-endian uint32 extents, then the
    row-major payload little-endian, with no alignment padding.
    """
    dt = np.dtype(arr.dtype)
    if dt not in _DTYPE_TO_CODE:
        raise FormatError(f"DTNS supports float32/float64 payloads, got {dt}")
    if arr.ndim > 255:
        raise FormatError("DTNS supports at most 255 dimensions")
    check_shape(arr.shape)
    header = _DTNS_MAGIC + struct.pack(
        "<BBB", _DTNS_VERSION, _DTYPE_TO_CODE[dt], arr.ndim
    )
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr).astype(dt.newbyteorder("<"), copy=False)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def read_dtns(path) -> np.ndarray:
    """Read a DTNS tensor; raises :class:`FormatError` on malformed files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 7 or blob[:4] != _DTNS_MAGIC:
        raise FormatError(f"{path}: not a DTNS file (bad magic)")
    version, dtype_code, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != _DTNS_VERSION:
        raise FormatError(f"{path}: unsupported DTNS version {version}")
    if dtype_code not in _CODE_TO_DTYPE:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    offset = 7
    if len(blob) < offset + 4 * ndim:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    if any(e < 1 for e in shape):
        raise FormatError(f"{path}: invalid extent in shape {shape}")
    dt = _CODE_TO_DTYPE[dtype_code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = offset + count * dt.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload length {len(blob) - offset} does not match "
            f"shape {shape} ({count} elements)"
        )
    arr = np.frombuffer(blob, dtype=dt, count=count, offset=offset)
    return arr.reshape(shape).astype(dt.newbyteorder("="), copy=True)
