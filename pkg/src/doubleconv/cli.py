"""Command-line interface.

Subcommands: ``train``, ``eval``, ``inspect``, ``analyze``,
``export-filters``. Exit codes: 0 success, 1 usage error, 2 data/format
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import archdsl
from .correlation import DEFAULT_BASELINE_SEED, analyze_checkpoint, write_report_csv
from .errors import (
    ConfigError,
    DoubleConvError,
    FormatError,
    NumericError,
    ParameterError,
    ParseError,
    ShapeError,
)
from .netbuild import MANIFEST_NAME, load_checkpoint
from .tensor import write_dtns
from .train import TrainConfig, evaluate_checkpoint, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="doubleconv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a config file")
    p_train.add_argument("--config", required=True, help="architecture config file")
    p_train.add_argument("--data", required=True, help="'synthetic' or a CIFAR-10 directory")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--epochs", type=int, default=5)
    p_train.add_argument("--batch", type=int, default=200)
    p_train.add_argument("--optimizer", choices=["adadelta", "sgd"], default="adadelta")
    p_train.add_argument("--lr", type=float, default=0.1, help="sgd learning rate")
    p_train.add_argument("--no-augment", action="store_true")
    p_train.add_argument("--precision", type=int, choices=[32, 64], default=64)
    p_train.add_argument("--dropout", type=float, default=0.5)
    p_train.add_argument(
        "--dc-path", choices=["twostep", "reference"], default="twostep",
        help="double-conv execution path"
    )
    p_train.add_argument(
        "--timer", action="store_true",
        help="record wall-clock seconds in metrics.csv (breaks byte-reproducibility)"
    )
    p_train.add_argument("--train-per-class", type=int, default=200)
    p_train.add_argument("--test-per-class", type=int, default=100)
    p_train.add_argument("--motif-size", type=int, default=6)
    p_train.add_argument("--noise-sigma", type=float, default=0.1)
    p_train.add_argument("--data-seed", type=int, default=7)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=["train", "test"], required=True)
    p_eval.add_argument("--batch", type=int, default=200)

    p_inspect = sub.add_parser("inspect", help="shape/parameter table for a config")
    p_inspect.add_argument("--config", required=True)
    p_inspect.add_argument("--reference", help="reference config for the ratio line")

    p_an = sub.add_parser("analyze", help="translation-correlation report")
    p_an.add_argument("--checkpoint", required=True)
    p_an.add_argument("--k", type=int, default=1)
    p_an.add_argument("--seed", type=int, default=DEFAULT_BASELINE_SEED)
    p_an.add_argument("--out", required=True, help="CSV output path")

    p_exp = sub.add_parser("export-filters", help="export one layer's filters as DTNS")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--layer", type=int, required=True)
    p_exp.add_argument("--out", required=True)
    return parser


def _parse_arch_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return archdsl.parse_network(fh.read().splitlines())


def _cmd_train(args) -> int:
    config = TrainConfig(
        arch_path=args.config,
        data=args.data,
        out_dir=args.out,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch,
        optimizer=args.optimizer,
        lr=args.lr,
        augment=not args.no_augment,
        dropout_rate=args.dropout,
        precision=args.precision,
        dc_path=args.dc_path,
        timer=args.timer,
        synthetic_train_per_class=args.train_per_class,
        synthetic_test_per_class=args.test_per_class,
        synthetic_motif_size=args.motif_size,
        synthetic_noise=args.noise_sigma,
        synthetic_seed=args.data_seed,
    )
    result = train(config)
    for epoch, tl, te, ve, sec in result.rows:
        print(
            f"epoch {epoch}: train_loss {tl:.4f} train_err {te:.4f} "
            f"test_err {ve:.4f}" + (f" ({sec:.1f}s)" if config.timer else "")
        )
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_dir}")
    return 0


def _cmd_eval(args) -> int:
    err = evaluate_checkpoint(args.checkpoint, args.data, args.split, args.batch)
    print(f"{args.split} error rate: {err:.6f}")
    return 0


def _cmd_inspect(args) -> int:
    spec = _parse_arch_file(args.config)
    reference = _parse_arch_file(args.reference) if args.reference else None
    print(archdsl.inspect_table(spec, reference))
    return 0


def _cmd_analyze(args) -> int:
    manifest = os.path.join(args.checkpoint, MANIFEST_NAME)
    report = analyze_checkpoint(manifest, args.k, seed=args.seed)
    write_report_csv(report, args.out)
    for rec in report:
        print(
            f"{rec.layer}: rho{rec.k} = {rec.rho_mean:.4f} +/- {rec.rho_std:.4f} "
            f"(baseline {rec.baseline_mean:.4f} +/- {rec.baseline_std:.4f})"
        )
    print(f"report: {args.out}")
    return 0


def _cmd_export(args) -> int:
    net, _, _ = load_checkpoint(args.checkpoint)
    if args.layer < 0 or args.layer >= len(net.layers):
        raise ConfigError(f"layer index {args.layer} out of range 0-{len(net.layers) - 1}")
    layer = net.layers[args.layer]
    if "weights" not in layer.params:
        raise ConfigError(f"layer {args.layer} ({layer.kind}) has no filter weights")
    write_dtns(args.out, layer.params["weights"])
    print(f"exported layer {args.layer} ({layer.kind}) weights to {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
    "analyze": _cmd_analyze,
    "export-filters": _cmd_export,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ParameterError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ParseError, ShapeError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except DoubleConvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
