"""The double convolution operation and its variants.

A doubly convolutional layer keeps ``c_out`` oversized meta filters of
spatial size ``z_meta`` and convolves the input with every ``z_eff``-sized
sub-window of each meta filter, then pools the per-location response map
with window ``s``. Two independent execution paths are provided:

* :func:`double_conv_reference` evaluates the definition directly, patch
  by patch.
* :func:`double_conv_twostep` expands the meta filters into a flat bank,
  runs one ordinary convolution, and reorganizes/pools the result.

Both paths reduce every output cell through the same fixed-order
contraction primitive, so in float64 they agree bitwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .convops import PadSpec, _dots, _im2col, conv2d, pad_spatial, pool_grid
from .errors import InvalidSpecError, ShapeError, VariantError

__all__ = [
    "DcnnVariant",
    "DoubleConvSpec",
    "MetaFilterBank",
    "classify_variant",
    "concat_channel_multiplier",
    "double_conv_reference",
    "double_conv_twostep",
    "expand_meta_filters",
    "expand_meta_filters_identity",
]


@dataclass(frozen=True)
class DoubleConvSpec:
    """Hyper-parameters of one doubly convolutional layer.

    ``c_out`` meta filters of spatial size ``z_meta`` with effective filter
    size ``z_eff`` and pooling size ``s`` over the response map. Each meta
    filter contributes ``n = ((z_meta - z_eff + 1) / s)**2`` output channels.
    """

    c_out: int
    z_meta: int
    z_eff: int
    s: int
    pool_kind: str = "max"

    def __post_init__(self):
        for name in ("c_out", "z_meta", "z_eff", "s"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidSpecError(f"{name} must be a positive integer, got {v!r}")
        if self.z_meta < self.z_eff:
            raise InvalidSpecError(
                f"meta filter size {self.z_meta} smaller than effective size {self.z_eff}"
            )
        if self.window_span % self.s:
            raise InvalidSpecError(
                f"(z_meta - z_eff + 1) = {self.window_span} not divisible by s = {self.s}"
            )
        if self.pool_kind not in ("max", "avg"):
            raise InvalidSpecError(f"unknown pool kind {self.pool_kind!r}")

    @property
    def window_span(self) -> int:
        """Side length of the per-location response map: z_meta - z_eff + 1."""
        return self.z_meta - self.z_eff + 1

    @property
    def channel_multiplier(self) -> int:
        """Output channels contributed per meta filter."""
        return (self.window_span // self.s) ** 2


@dataclass
class MetaFilterBank:
    """A spec plus its learnable meta filter weights [c_out, c_in, z_meta, z_meta]."""

    spec: DoubleConvSpec
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4:
            raise ShapeError(f"meta filter weights must be 4D, got {w.shape}")
        if w.shape[0] != self.spec.c_out:
            raise ShapeError(
                f"weights have {w.shape[0]} meta filters, spec says {self.spec.c_out}"
            )
        if w.shape[2] != self.spec.z_meta or w.shape[3] != self.spec.z_meta:
            raise ShapeError(
                f"weight spatial dims {w.shape[2]}x{w.shape[3]} do not match "
                f"z_meta = {self.spec.z_meta}"
            )

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]


class DcnnVariant(enum.Enum):
    """The extreme cases of the double convolution hyper-parameters."""

    PLAIN_CNN = "PlainCNN"
    CONCAT_DCNN = "ConcatDCNN"
    MAXOUT_DCNN = "MaxoutDCNN"
    GENERAL = "General"


def classify_variant(spec: DoubleConvSpec) -> DcnnVariant:
    """Tag a spec as PlainCNN (z'=z), ConcatDCNN (s=1), MaxoutDCNN (s=z'-z+1), or General."""
    if spec.z_meta == spec.z_eff:
        return DcnnVariant.PLAIN_CNN
    if spec.s == 1:
        return DcnnVariant.CONCAT_DCNN
    if spec.s == spec.window_span:
        return DcnnVariant.MAXOUT_DCNN
    return DcnnVariant.GENERAL


def concat_channel_multiplier(spec: DoubleConvSpec) -> float:
    """Channel gain of the s=1 variant at equal parameter budget.

    A meta filter of size z' holds as many parameters as (z'/z)^2 plain
    z-sized filters but yields (z'-z+1)^2 output channels, a factor of
    (z'-z+1)^2 * z^2 / z'^2.
    """
    if spec.s != 1:
        raise VariantError(f"channel multiplier is defined for s=1 banks, got s={spec.s}")
    m = spec.window_span
    return (m * m * spec.z_eff * spec.z_eff) / (spec.z_meta * spec.z_meta)


def expand_meta_filters(bank: MetaFilterBank) -> np.ndarray:
    """Flatten a meta bank into [c_out*(z'-z+1)^2, c_in, z, z] effective filters.

    Sub-filters of meta filter k occupy the contiguous block
    ``k*(z'-z+1)^2 .. (k+1)*(z'-z+1)^2 - 1`` in row-major window order.
    """
    spec, w = bank.spec, bank.weights
    z, m = spec.z_eff, spec.window_span
    win = np.lib.stride_tricks.sliding_window_view(w, (z, z), axis=(-2, -1))
    # [c_out, c_in, m, m, z, z] -> [c_out, m, m, c_in, z, z]
    win = np.moveaxis(win, 1, 3)
    return np.ascontiguousarray(win).reshape(spec.c_out * m * m, bank.c_in, z, z)


def expand_meta_filters_identity(bank: MetaFilterBank) -> np.ndarray:
    """Expansion via convolution with a reorganized identity kernel.

    The identity matrix of size c_in*z^2 is reorganized into a bank of
    one-hot filters; convolving each meta filter (viewed as an image) with
    that bank reads out every effective sub-filter. Agrees exactly with
    :func:`expand_meta_filters`.
    """
    spec, w = bank.spec, bank.weights
    c_in, z, m = bank.c_in, spec.z_eff, spec.window_span
    eye = np.eye(c_in * z * z, dtype=w.dtype).reshape(c_in * z * z, c_in, z, z)
    out = np.empty((spec.c_out * m * m, c_in, z, z), dtype=w.dtype)
    for k in range(spec.c_out):
        resp = conv2d(w[k], eye)  # [c_in*z^2, m, m]
        # resp[(c,a,b), u, v] = w[k, c, u+a, v+b]
        sub = resp.reshape(c_in, z, z, m, m).transpose(3, 4, 0, 1, 2)
        out[k * m * m : (k + 1) * m * m] = sub.reshape(m * m, c_in, z, z)
    return out


def _check_input(x: np.ndarray, bank: MetaFilterBank, pad: PadSpec) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeError(f"double convolution expects [c, h, w], got {x.shape}")
    if x.shape[0] != bank.c_in:
        raise ShapeError(
            f"input has {x.shape[0]} channels but meta filters expect {bank.c_in}"
        )
    z = bank.spec.z_eff
    xp = pad_spatial(x, pad.padding_for(z))
    if xp.shape[-2] < z or xp.shape[-1] < z:
        raise ShapeError(
            f"spatial dims {xp.shape[-2]}x{xp.shape[-1]} smaller than effective "
            f"filter {z}x{z} after padding"
        )
    return xp


def double_conv_reference(
    x: np.ndarray, bank: MetaFilterBank, pad: PadSpec = PadSpec.valid()
) -> np.ndarray:
    """Definition-based double convolution of [c_in, h, w] -> [n*c_out, h', w'].

    For every location, the z*z input patch is correlated against every
    sub-window of each meta filter, producing an (z'-z+1)^2 response map
    that is pooled with window s and flattened row-major into the n output
    channels of that meta filter (meta filter k owns channel block
    ``[n*k, n*(k+1))``).
    """
    spec = bank.spec
    z, m, s, n = spec.z_eff, spec.window_span, spec.s, spec.channel_multiplier
    xp = _check_input(x, bank, pad)
    h_out, w_out = xp.shape[-2] - z + 1, xp.shape[-1] - z + 1
    k_len = bank.c_in * z * z

    # Row r of windows[k] is sub-window r (row-major corner order) of meta
    # filter k, flattened; computed directly from the bank, not via the
    # expansion routine, to keep this path self-contained.
    win = np.lib.stride_tricks.sliding_window_view(bank.weights, (z, z), axis=(-2, -1))
    win = np.moveaxis(win, 1, 3)  # [c_out, m, m, c_in, z, z]
    windows = np.ascontiguousarray(win).reshape(spec.c_out, m * m, k_len)

    out = np.empty((n * spec.c_out, h_out, w_out), dtype=x.dtype)
    patch_row = np.empty((1, k_len), dtype=x.dtype)
    for i in range(h_out):
        for j in range(w_out):
            patch_row[0] = xp[:, i : i + z, j : j + z].ravel()
            for k in range(spec.c_out):
                resp = _dots(windows[k], patch_row).reshape(m, m)
                pooled = pool_grid(resp, s, spec.pool_kind)
                out[k * n : (k + 1) * n, i, j] = pooled.ravel()
    return out


def double_conv_twostep(
    x: np.ndarray, bank: MetaFilterBank, pad: PadSpec = PadSpec.valid()
) -> np.ndarray:
    """Two-step double convolution: expand, convolve once, reorganize, pool.

    Identical contract to :func:`double_conv_reference`; agrees bitwise in
    float64 and to ~1e-5 max abs difference in float32.
    """
    spec = bank.spec
    z, m, s, n = spec.z_eff, spec.window_span, spec.s, spec.channel_multiplier
    xp = _check_input(x, bank, pad)
    h_out, w_out = xp.shape[-2] - z + 1, xp.shape[-1] - z + 1

    expanded = expand_meta_filters(bank)
    cols = _im2col(xp, z)  # [h'*w', c_in*z*z]
    fmat = expanded.reshape(expanded.shape[0], -1)
    conv = _dots(fmat, cols)  # [c_out*m*m, h'*w']

    # Channel (k, u, v) -> response-map grid, pool over (u, v), then
    # flatten the pooled grid back into channels.
    grid = conv.reshape(spec.c_out, m, m, h_out * w_out)
    grid = np.moveaxis(grid, 3, 1)  # [c_out, h'*w', m, m]
    pooled = pool_grid(grid, s, spec.pool_kind)  # [c_out, h'*w', m/s, m/s]
    pooled = np.moveaxis(pooled, 1, 3)  # [c_out, m/s, m/s, h'*w']
    return np.ascontiguousarray(pooled).reshape(n * spec.c_out, h_out, w_out)
