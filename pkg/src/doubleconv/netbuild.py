"""Build trainable networks from parsed architectures; checkpoint save/load.

Token expansion follows the layer recipe used throughout: every C/DC/MC
token becomes convolution + batch norm + ReLU (MC adds a channel max),
every P token is followed by dropout, GAP feeds the linear classifier.

A checkpoint is a directory holding one DTNS file per parameter and
running statistic, a tab-separated ``manifest.txt`` mapping layer
index/kind/name to file names, and a ``config.json`` with the rendered
architecture and run settings.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import archdsl
from .archdsl import (
    ArchSpec,
    ConvToken,
    DoubleConvToken,
    GapToken,
    MaxoutConvToken,
    PoolToken,
    SoftmaxToken,
)
from .convops import PadSpec
from .dconv import MetaFilterBank
from .errors import FormatError
from .layers import (
    BatchNormLayer,
    ChannelMaxLayer,
    ConvLayer,
    DoubleConvLayer,
    DropoutLayer,
    GlobalAvgPoolLayer,
    MaxPoolLayer,
    Network,
    ReLULayer,
    SoftmaxXentLayer,
)
from .tensor import read_dtns, write_dtns

MANIFEST_NAME = "manifest.txt"
CONFIG_NAME = "config.json"


def build_network(
    arch: ArchSpec,
    init_rng: np.random.Generator,
    dropout_rng: np.random.Generator | None = None,
    dtype=np.float64,
    dropout_rate: float = 0.5,
    dc_path: str = "twostep",
) -> Network:
    """Instantiate a :class:`Network` with scaled Gaussian initialization.

    Filters draw from N(0, 2/fan_in) with fan_in = c_in*z^2 (c_in*z'^2 for
    meta filters); the classifier uses N(0, 1/features).
    """
    layers = []
    c = arch.input_shape[0]
    for tok in arch.tokens:
        if isinstance(tok, (ConvToken, MaxoutConvToken)):
            fan_in = c * tok.z * tok.z
            w = init_rng.standard_normal((tok.c, c, tok.z, tok.z)) * np.sqrt(2.0 / fan_in)
            layers.append(ConvLayer(w.astype(dtype), PadSpec.same()))
            layers.append(BatchNormLayer(tok.c, dtype=dtype))
            layers.append(ReLULayer())
            if isinstance(tok, MaxoutConvToken):
                layers.append(ChannelMaxLayer(tok.k))
                c = tok.c // tok.k
            else:
                c = tok.c
        elif isinstance(tok, DoubleConvToken):
            spec = tok.spec()
            fan_in = c * tok.z_meta * tok.z_meta
            w = init_rng.standard_normal((tok.c, c, tok.z_meta, tok.z_meta)) * np.sqrt(
                2.0 / fan_in
            )
            bank = MetaFilterBank(spec, w.astype(dtype))
            layers.append(DoubleConvLayer(bank, PadSpec.same(), path=dc_path))
            c = tok.c * spec.channel_multiplier
            layers.append(BatchNormLayer(c, dtype=dtype))
            layers.append(ReLULayer())
        elif isinstance(tok, PoolToken):
            layers.append(MaxPoolLayer(tok.s))
            if dropout_rate > 0:
                layers.append(DropoutLayer(dropout_rate))
        elif isinstance(tok, GapToken):
            layers.append(GlobalAvgPoolLayer())
        elif isinstance(tok, SoftmaxToken):
            w = init_rng.standard_normal((tok.classes, c)) * np.sqrt(1.0 / c)
            layers.append(SoftmaxXentLayer(w.astype(dtype)))
    return Network(layers, rng=dropout_rng)


def save_checkpoint(out_dir, net: Network, arch: ArchSpec, extra: dict | None = None) -> None:
    """Write all parameters and running statistics as DTNS files plus manifest."""
    os.makedirs(out_dir, exist_ok=True)
    manifest_rows = []
    for idx, layer in enumerate(net.layers):
        for group in ("params", "stats"):
            for name, arr in getattr(layer, group).items():
                fname = f"layer{idx:02d}_{layer.kind}_{name}.dtns"
                write_dtns(os.path.join(out_dir, fname), arr)
                manifest_rows.append(f"{idx}\t{layer.kind}\t{name}\t{fname}")
    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_rows) + "\n")
    config = {
        "arch": archdsl.render(arch),
        "input_shape": list(arch.input_shape),
        "dtype": str(np.dtype(_net_dtype(net))),
    }
    if extra:
        config.update(extra)
    with open(os.path.join(out_dir, CONFIG_NAME), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _net_dtype(net: Network):
    for _, _, arr in net.parameters():
        return arr.dtype
    return np.float64


def load_checkpoint(ckpt_dir, dropout_rng=None, dc_path="twostep"):
    """Rebuild (network, arch, config) from a checkpoint directory."""
    cfg_path = os.path.join(ckpt_dir, CONFIG_NAME)
    try:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint config {cfg_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed checkpoint config {cfg_path}: {exc}") from exc
    arch = archdsl.parse_network(config["arch"])
    dtype = np.dtype(config.get("dtype", "float64")).type
    net = build_network(
        arch,
        init_rng=np.random.default_rng(0),
        dropout_rng=dropout_rng,
        dtype=dtype,
        dropout_rate=config.get("dropout_rate", 0.5),
        dc_path=config.get("dc_path", dc_path),
    )
    manifest = os.path.join(ckpt_dir, MANIFEST_NAME)
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            rows = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise FormatError(f"cannot read manifest {manifest}: {exc}") from exc
    for row in rows:
        parts = row.split("\t")
        if len(parts) != 4:
            raise FormatError(f"malformed manifest row: {row!r}")
        idx, kind, name, fname = int(parts[0]), parts[1], parts[2], parts[3]
        if idx >= len(net.layers) or net.layers[idx].kind != kind:
            raise FormatError(
                f"manifest row {row!r} does not match the rebuilt architecture"
            )
        layer = net.layers[idx]
        arr = read_dtns(os.path.join(ckpt_dir, fname))
        target = layer.params if name in layer.params else layer.stats
        if name not in target:
            raise FormatError(f"layer {idx} ({kind}) has no slot named {name!r}")
        if target[name].shape != arr.shape:
            raise FormatError(
                f"{fname}: shape {arr.shape} does not match expected {target[name].shape}"
            )
        target[name] = arr.astype(dtype, copy=False)
    return net, arch, config
