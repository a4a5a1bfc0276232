"""Training and evaluation loops plus their configuration.

Runs are deterministic for a fixed seed under single-threaded execution:
initialization, shuffling, dropout, and augmentation each draw from a
dedicated stream derived from the run seed, so metrics CSVs and
checkpoints are byte-identical across repeats. The ``seconds`` metrics
column is therefore written as 0 unless wall-clock timing is explicitly
enabled.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import archdsl
from .data import Dataset, augment_batch, load_cifar10, make_synthetic
from .errors import ConfigError, NumericError, ShapeError
from .netbuild import build_network, load_checkpoint, save_checkpoint
from .optim import AdadeltaState, adadelta_step, sgd_step
from .tensor import read_dtns, resolve_dtype, write_dtns

METRICS_NAME = "metrics.csv"
MEAN_FILE = "preprocess_mean.dtns"
CHECKPOINT_SUBDIR = "checkpoint"


@dataclass
class TrainConfig:
    arch_path: str
    data: str  # "synthetic" or a CIFAR-10 directory
    out_dir: str
    seed: int = 0
    epochs: int = 5
    batch_size: int = 200
    optimizer: str = "adadelta"
    lr: float = 0.1
    rho: float = 0.95
    eps: float = 1e-6
    augment: bool = True
    augment_pad: int = 4
    dropout_rate: float = 0.5
    precision: int = 64
    dc_path: str = "twostep"
    timer: bool = False
    synthetic_train_per_class: int = 200
    synthetic_test_per_class: int = 100
    synthetic_motif_size: int = 6
    synthetic_noise: float = 0.1
    synthetic_seed: int = 7

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.optimizer not in ("adadelta", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class TrainResult:
    metrics_path: str
    checkpoint_dir: str
    rows: list = field(default_factory=list)
    final_test_err: float = float("nan")
    final_train_acc: float = float("nan")


def _load_datasets(config: TrainConfig, arch, dtype):
    """Train/test datasets matching the architecture's input and class count."""
    c, h, w = arch.input_shape
    if config.data == "synthetic":
        if h != w:
            raise ConfigError("synthetic data requires a square input shape")
        train = make_synthetic(
            config.synthetic_train_per_class,
            classes=arch.classes,
            motif_size=config.synthetic_motif_size,
            image_size=h,
            noise_sigma=config.synthetic_noise,
            seed=config.synthetic_seed,
            channels=c,
            dtype=dtype,
        )
        test = make_synthetic(
            config.synthetic_test_per_class,
            classes=arch.classes,
            motif_size=config.synthetic_motif_size,
            image_size=h,
            noise_sigma=config.synthetic_noise,
            seed=config.synthetic_seed + 1,
            channels=c,
            dtype=dtype,
        )
        test = Dataset(test.images, test.labels, train.mean)  # train mean everywhere
        return train, test
    train = load_cifar10(config.data, "train", dtype=dtype)
    test = load_cifar10(config.data, "test", dtype=dtype)
    if train.images.shape[1:] != (c, h, w):
        raise ShapeError(
            f"architecture expects input {(c, h, w)}, dataset provides "
            f"{train.images.shape[1:]}"
        )
    return train, test


def evaluate_net(net, images, labels, mean, batch_size, dtype) -> float:
    """Evaluation-mode error rate over a split, processed in batches."""
    n = len(labels)
    if n == 0:
        raise ConfigError("cannot evaluate an empty split")
    was_training = net.training
    net.eval()
    wrong = 0
    try:
        for start in range(0, n, batch_size):
            xb = (images[start : start + batch_size] - mean).astype(dtype)
            preds = net.predict(xb)
            wrong += int((preds != labels[start : start + batch_size]).sum())
    finally:
        net.training = was_training
    return wrong / n


def train(config: TrainConfig) -> TrainResult:
    """Run the full training protocol and write metrics plus a checkpoint."""
    with open(config.arch_path, "r", encoding="utf-8") as fh:
        arch_lines = fh.read().splitlines()
    arch = archdsl.parse_network(arch_lines)
    dtype = resolve_dtype(config.precision)

    streams = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, shuffle_rng, dropout_rng, augment_rng = (
        np.random.default_rng(s) for s in streams
    )
    net = build_network(
        arch,
        init_rng=init_rng,
        dropout_rng=dropout_rng,
        dtype=dtype,
        dropout_rate=config.dropout_rate,
        dc_path=config.dc_path,
    )
    train_ds, test_ds = _load_datasets(config, arch, dtype)
    mean = train_ds.mean

    params = [arr for _, _, arr in net.parameters()]
    state = AdadeltaState(rho=config.rho, eps=config.eps)

    os.makedirs(config.out_dir, exist_ok=True)
    rows = []
    n = len(train_ds)
    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        order = shuffle_rng.permutation(n)
        net.train()
        loss_sum = 0.0
        wrong = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = train_ds.images[idx]
            if config.augment:
                xb = augment_batch(xb, augment_rng, config.augment_pad)
            xb = (xb - mean).astype(dtype)
            yb = train_ds.labels[idx]
            logits = net.forward(xb)
            loss, _ = net.backward(yb)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = [g for _, _, g in net.gradients()]
            if config.optimizer == "adadelta":
                adadelta_step(params, grads, state)
            else:
                sgd_step(params, grads, config.lr)
            loss_sum += loss * len(idx)
            wrong += int((np.argmax(logits, axis=1) != yb).sum())
        train_loss = loss_sum / n
        train_err = wrong / n
        test_err = evaluate_net(
            net, test_ds.images, test_ds.labels, mean, config.batch_size, dtype
        )
        seconds = time.perf_counter() - tic if config.timer else 0.0
        rows.append((epoch, train_loss, train_err, test_err, seconds))

    metrics_path = os.path.join(config.out_dir, METRICS_NAME)
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,train_err,test_err,seconds\n")
        for epoch, tl, te, ve, sec in rows:
            fh.write(f"{epoch},{tl:.6f},{te:.6f},{ve:.6f},{sec:.3f}\n")

    ckpt_dir = os.path.join(config.out_dir, CHECKPOINT_SUBDIR)
    extra = {
        "classes": arch.classes,
        "dropout_rate": config.dropout_rate,
        "dc_path": config.dc_path,
        "data": "synthetic" if config.data == "synthetic" else "cifar10",
        "mean_file": MEAN_FILE,
        "seed": config.seed,
        "precision": config.precision,
    }
    if config.data == "synthetic":
        extra["synthetic"] = {
            "train_per_class": config.synthetic_train_per_class,
            "test_per_class": config.synthetic_test_per_class,
            "motif_size": config.synthetic_motif_size,
            "noise_sigma": config.synthetic_noise,
            "seed": config.synthetic_seed,
        }
    save_checkpoint(ckpt_dir, net, arch, extra)
    write_dtns(os.path.join(ckpt_dir, MEAN_FILE), mean)

    return TrainResult(
        metrics_path=metrics_path,
        checkpoint_dir=ckpt_dir,
        rows=rows,
        final_test_err=rows[-1][3],
        final_train_acc=1.0 - rows[-1][2],
    )


def evaluate_checkpoint(ckpt_dir, data, split, batch_size=200) -> float:
    """Error rate of a saved checkpoint on a dataset split."""
    net, arch, cfg = load_checkpoint(ckpt_dir)
    dtype = resolve_dtype(cfg.get("precision", 64))
    mean = read_dtns(os.path.join(ckpt_dir, cfg.get("mean_file", MEAN_FILE)))
    if data == "synthetic":
        syn = cfg.get("synthetic")
        if syn is None:
            raise ConfigError("checkpoint was not trained on synthetic data")
        per_class = syn["train_per_class"] if split == "train" else syn["test_per_class"]
        seed = syn["seed"] if split == "train" else syn["seed"] + 1
        c, h, _ = arch.input_shape
        ds = make_synthetic(
            per_class,
            classes=cfg["classes"],
            motif_size=syn["motif_size"],
            image_size=h,
            noise_sigma=syn["noise_sigma"],
            seed=seed,
            channels=c,
            dtype=dtype,
        )
    else:
        ds = load_cifar10(data, split, dtype=dtype)
    return evaluate_net(net, ds.images, ds.labels, mean.astype(dtype), batch_size, dtype)
