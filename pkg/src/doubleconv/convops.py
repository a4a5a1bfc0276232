"""Convolution building blocks: conv2d, pooling, padding, patch extraction.

Convolution is implemented as correlation (no filter flipping). Every
output cell is reduced in a fixed order (channel-major, then row-major
over the kernel window) through a single contraction primitive, so results
are bitwise deterministic and independent of batch size or filter count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "PadSpec",
    "conv2d",
    "conv2d_batch",
    "extract_patches",
    "global_avg_pool",
    "max_pool2d",
    "pad_spatial",
    "pool_grid",
]


@dataclass(frozen=True)
class PadSpec:
    """Zero padding applied symmetrically to both spatial sides.

    ``same`` mode keeps the output spatial size equal to the input's and
    therefore requires an odd kernel size.
    """

    mode: str = "valid"
    amount: int = 0

    def __post_init__(self):
        if self.mode not in ("valid", "same", "explicit"):
            raise ShapeError(f"unknown padding mode {self.mode!r}")
        if self.amount < 0:
            raise ShapeError("padding amount must be non-negative")

    @classmethod
    def valid(cls) -> "PadSpec":
        return cls("valid")

    @classmethod
    def same(cls) -> "PadSpec":
        return cls("same")

    @classmethod
    def explicit(cls, amount: int) -> "PadSpec":
        return cls("explicit", amount)

    def padding_for(self, z: int) -> int:
        """Per-side padding for kernel size *z*."""
        if self.mode == "valid":
            return 0
        if self.mode == "same":
            if z % 2 == 0:
                raise ShapeError(f"same padding requires an odd kernel size, got {z}")
            return (z - 1) // 2
        return self.amount


def pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad the last two dimensions by *p* on every side."""
    if p == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, widths)


def _check_filters(filters: np.ndarray) -> tuple[int, int, int]:
    if filters.ndim != 4:
        raise ShapeError(f"filter bank must be 4D, got {filters.shape}")
    c_out, c_in, zh, zw = filters.shape
    if zh != zw:
        raise ShapeError(f"filters must be spatially square, got {zh}x{zw}")
    return c_out, c_in, zh


def _dots(filters_mat: np.ndarray, cols_mat: np.ndarray) -> np.ndarray:
    # The one contraction primitive shared by every convolution path.
    # einsum with optimize=False reduces the shared K axis in a fixed
    # sequential order, so a given (filter row, patch row) pair yields the
    # same bits no matter the outer extents.
    return np.einsum("fk,lk->fl", filters_mat, cols_mat, optimize=False)


def _im2col(x: np.ndarray, z: int) -> np.ndarray:
    """All z*z windows of ``x`` ([..., c, h, w]) as rows [..., L, c*z*z]."""
    win = np.lib.stride_tricks.sliding_window_view(x, (z, z), axis=(-2, -1))
    # [..., c, h', w', z, z] -> [..., h', w', c, z, z]
    win = np.moveaxis(win, -5, -3)
    lead = win.shape[:-5]
    hp, wp, c = win.shape[-5], win.shape[-4], win.shape[-3]
    return np.ascontiguousarray(win).reshape(*lead, hp * wp, c * z * z)


def conv2d(x: np.ndarray, filters: np.ndarray, pad: PadSpec = PadSpec.valid()) -> np.ndarray:
    """2D correlation of a [c_in, h, w] image with a [c_out, c_in, z, z] bank."""
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects a [c, h, w] input, got {x.shape}")
    out = conv2d_batch(x[None], filters, pad)
    return out[0]


def conv2d_batch(x: np.ndarray, filters: np.ndarray, pad: PadSpec = PadSpec.valid()) -> np.ndarray:
    """Batched conv2d over [b, c_in, h, w]; returns [b, c_out, h', w']."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d_batch expects [b, c, h, w], got {x.shape}")
    c_out, c_in, z = _check_filters(filters)
    b, c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"input has {c} channels but filters expect {c_in}")
    xp = pad_spatial(x, pad.padding_for(z))
    hp, wp = xp.shape[-2], xp.shape[-1]
    if hp < z or wp < z:
        raise ShapeError(
            f"spatial dims {hp}x{wp} smaller than kernel {z}x{z} after padding"
        )
    h_out, w_out = hp - z + 1, wp - z + 1
    cols = _im2col(xp, z).reshape(b * h_out * w_out, c_in * z * z)
    fmat = np.ascontiguousarray(filters.reshape(c_out, -1))
    out = _dots(fmat, cols)  # [c_out, b*h'*w']
    out = out.reshape(c_out, b, h_out, w_out)
    return np.ascontiguousarray(np.moveaxis(out, 0, 1))


def pool_grid(x: np.ndarray, s: int, kind: str = "max") -> np.ndarray:
    """Pool the last two dims with non-overlapping s*s windows (stride s)."""
    h, w = x.shape[-2], x.shape[-1]
    if s < 1:
        raise ShapeError(f"pooling size must be >= 1, got {s}")
    if h % s or w % s:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by pooling size {s}")
    lead = x.shape[:-2]
    win = np.ascontiguousarray(x).reshape(*lead, h // s, s, w // s, s)
    if kind == "max":
        return win.max(axis=-1).max(axis=-2)
    if kind == "avg":
        # Row sums first, then sum of row sums: fixed nesting keeps the
        # reduction order identical across call sites.
        return win.sum(axis=-1).sum(axis=-2) / (s * s)
    raise ShapeError(f"unknown pooling kind {kind!r}")


def max_pool2d(x: np.ndarray, s: int) -> np.ndarray:
    """Spatial max pooling of [c, h, w] (or [..., h, w]) with window and stride s."""
    if x.ndim < 2:
        raise ShapeError("max_pool2d requires at least 2 dimensions")
    return pool_grid(x, s, "max")


def extract_patches(x: np.ndarray, z: int) -> np.ndarray:
    """All valid z*z windows of a [c, h, w] tensor in row-major corner order.

    Returns [(h-z+1)*(w-z+1), c, z, z]; this scan order is shared with the
    meta-filter expansion, which depends on it.
    """
    if x.ndim != 3:
        raise ShapeError(f"extract_patches expects [c, h, w], got {x.shape}")
    c, h, w = x.shape
    if z < 1 or z > h or z > w:
        raise ShapeError(f"window {z} does not fit spatial dims {h}x{w}")
    win = np.lib.stride_tricks.sliding_window_view(x, (z, z), axis=(-2, -1))
    # [c, h', w', z, z] -> [h', w', c, z, z] -> [L, c, z, z]
    win = win.transpose(1, 2, 0, 3, 4)
    return np.ascontiguousarray(win).reshape((h - z + 1) * (w - z + 1), c, z, z)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel mean over all spatial positions ([..., c, h, w] -> [..., c])."""
    if x.ndim < 3:
        raise ShapeError("global_avg_pool requires at least 3 dimensions")
    return x.mean(axis=(-2, -1))
