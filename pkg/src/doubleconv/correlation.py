"""Translation-correlation statistics for convolutional filter banks.

The k-translation correlation between two same-shaped filters is the
maximum normalized flat inner product achieved by shifting one of them up
to k steps along each spatial axis (the zero shift excluded). Channels
shift rigidly together, and norms are taken over the full filters, so
content shifted past the border lowers the correlation.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFilterError, FormatError, ShapeError
from .tensor import flat_inner, gaussian_fill, l2_norm, make_rng, read_dtns, translate

DEFAULT_BASELINE_SEED = 12345

__all__ = [
    "CorrelationReport",
    "LayerCorrelation",
    "analyze_checkpoint",
    "avg_max_translation_correlation",
    "gaussian_baseline",
    "translation_correlation",
    "write_report_csv",
]


def translation_correlation(w_i: np.ndarray, w_j: np.ndarray, k: int) -> float:
    """Max normalized inner product of w_i against shifts of w_j up to k steps."""
    if w_i.shape != w_j.shape:
        raise ShapeError(f"filter shapes differ: {w_i.shape} vs {w_j.shape}")
    if k < 1:
        raise ShapeError(f"k must be >= 1, got {k}")
    ni, nj = l2_norm(w_i), l2_norm(w_j)
    if ni == 0.0 or nj == 0.0:
        raise DegenerateFilterError("zero-norm filter has no translation correlation")
    best = -np.inf
    for x in range(-k, k + 1):
        for y in range(-k, k + 1):
            if x == 0 and y == 0:
                continue
            best = max(best, flat_inner(w_i, translate(w_j, x, y)))
    return best / (ni * nj)


def avg_max_translation_correlation(bank: np.ndarray, k: int) -> tuple[float, float]:
    """Mean and population std of each filter's best correlation to any other.

    ``bank`` is [N, c, z, z] with N >= 2.
    """
    if bank.ndim != 4:
        raise ShapeError(f"filter bank must be [N, c, z, z], got {bank.shape}")
    n = bank.shape[0]
    if n < 2:
        raise ShapeError(f"need at least 2 filters, got {n}")
    maxima = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(n):
            if j == i:
                continue
            best = max(best, translation_correlation(bank[i], bank[j], k))
        maxima[i] = best
    return float(maxima.mean()), float(maxima.std())


def gaussian_baseline(shape, k: int, seed: int) -> tuple[float, float]:
    """Statistics of a same-shaped standard-Gaussian bank; deterministic per seed."""
    bank = gaussian_fill(shape, make_rng(seed))
    return avg_max_translation_correlation(bank, k)


@dataclass(frozen=True)
class LayerCorrelation:
    """One analyzed filter tensor with its matched Gaussian baseline."""

    layer: str
    n_filters: int
    k: int
    rho_mean: float
    rho_std: float
    baseline_mean: float
    baseline_std: float
    baseline_seed: int


@dataclass(frozen=True)
class CorrelationReport:
    records: tuple

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


#: Manifest layer kinds whose ``weights`` entries hold convolution filters.
_FILTER_KINDS = {"conv", "double_conv"}


def analyze_checkpoint(manifest_path, k: int, seed: int = DEFAULT_BASELINE_SEED) -> CorrelationReport:
    """Correlation statistics for every convolutional filter tensor in a checkpoint.

    The manifest is the tab-separated ``index<TAB>kind<TAB>name<TAB>file``
    listing written next to the DTNS tensors. Meta filters are analyzed at
    their full spatial extent. Non-4D filter tensors are skipped with a
    warning; missing files raise :class:`FormatError` naming the file.
    """
    manifest_path = str(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            rows = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise FormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = os.path.dirname(manifest_path)
    records = []
    for row in rows:
        parts = row.split("\t")
        if len(parts) != 4:
            raise FormatError(f"malformed manifest row: {row!r}")
        idx, kind, name, fname = parts
        if kind not in _FILTER_KINDS or name != "weights":
            continue
        path = os.path.join(base, fname)
        try:
            arr = read_dtns(path)
        except OSError as exc:
            raise FormatError(f"cannot read filter file {path}: {exc}") from exc
        if arr.ndim != 4:
            warnings.warn(f"skipping non-4D tensor {fname} with shape {arr.shape}")
            continue
        mean, std = avg_max_translation_correlation(arr, k)
        bmean, bstd = gaussian_baseline(arr.shape, k, seed)
        records.append(
            LayerCorrelation(
                layer=f"layer{int(idx):02d}-{kind}",
                n_filters=arr.shape[0],
                k=k,
                rho_mean=mean,
                rho_std=std,
                baseline_mean=bmean,
                baseline_std=bstd,
                baseline_seed=seed,
            )
        )
    return CorrelationReport(tuple(records))


def write_report_csv(report: CorrelationReport, path) -> None:
    """Write the report with 6-significant-digit statistics."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "layer",
                "N",
                "k",
                "rho_mean",
                "rho_std",
                "baseline_mean",
                "baseline_std",
                "baseline_seed",
            ]
        )
        for r in report:
            writer.writerow(
                [
                    r.layer,
                    r.n_filters,
                    r.k,
                    f"{r.rho_mean:.6g}",
                    f"{r.rho_std:.6g}",
                    f"{r.baseline_mean:.6g}",
                    f"{r.baseline_std:.6g}",
                    r.baseline_seed,
                ]
            )
