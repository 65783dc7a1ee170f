"""Command-line entry point: ``mpdropout {train,sweep,model-count}``."""
from __future__ import annotations

import argparse
import logging
import sys

from mpdropout.arch import PRESETS, parse_arch
from mpdropout.errors import MPDropoutError
from mpdropout.experiment import DEFAULT_P_GRID, ExperimentConfig, run_training, sweep
from mpdropout.network import TEST_POOL_MODES, TRAIN_POOL_MODES
from mpdropout.persist import save_params
from mpdropout.reports import format_model_count, report_model_count, write_metrics_csv, \
    write_sweep_csv

log = logging.getLogger("mpdropout")


def _fc_dropout(value):
    if value.lower() == "off":
        return None
    return float(value)


def _p_list(value):
    return [float(v) for v in value.split(",") if v.strip()]


def _add_training_args(sub):
    sub.add_argument("--dataset", choices=("mnist", "cifar10", "cifar100"), default="mnist")
    sub.add_argument("--data-dir", required=True)
    sub.add_argument("--arch", help="architecture string or preset (default: dataset preset)")
    sub.add_argument("--fc-dropout", type=_fc_dropout, default=None, metavar="FLOAT|off")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--batch-size", type=int, default=100)
    sub.add_argument("--lr", type=float, default=0.1)
    sub.add_argument("--momentum", type=float, default=0.95)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", help="CSV output path (default: stdout)")
    sub.add_argument("--no-wall-time", action="store_true",
                     help="write wall_seconds as 0 so reruns give byte-identical CSV")


def build_parser():
    parser = argparse.ArgumentParser(prog="mpdropout", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="train one network, one CSV row per epoch")
    _add_training_args(train)
    train.add_argument("--train-pool", choices=TRAIN_POOL_MODES, default="max_dropout")
    train.add_argument("--test-pool", choices=TEST_POOL_MODES, default="prob_weighted")
    train.add_argument("--p", type=float, default=0.5)
    train.add_argument("--allow-cross-pairing", action="store_true",
                       help="permit stochastic pooling with a non-stochastic test mode and vice versa")
    train.add_argument("--save-params", metavar="PATH")

    sw = subs.add_parser("sweep", help="one model per retaining probability plus a "
                                       "stochastic-pooling baseline")
    _add_training_args(sw)
    sw.add_argument("--p-grid", type=_p_list, default=list(DEFAULT_P_GRID),
                    metavar="P1,P2,...")

    mc = subs.add_parser("model-count", help="number of max-pooling-dropout models per pool layer")
    mc.add_argument("--arch", default="mnist",
                    help=f"architecture string or preset ({', '.join(PRESETS)})")
    mc.add_argument("--format", choices=("text", "csv"), default="text")
    mc.add_argument("--out")
    return parser


def _config(args, **extra):
    return ExperimentConfig(
        dataset=args.dataset, arch=args.arch, fc_dropout=args.fc_dropout, epochs=args.epochs,
        batch_size=args.batch_size, lr=args.lr, momentum=args.momentum, seed=args.seed,
        data_dir=args.data_dir, record_time=not args.no_wall_time, **extra)


def _emit(writer, payload, out):
    if out:
        writer(payload, out)
    else:
        writer(payload, sys.stdout)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "model-count":
            text = format_model_count(report_model_count(parse_arch(args.arch)), args.format)
            if args.out:
                with open(args.out, "w") as f:
                    f.write(text)
            else:
                sys.stdout.write(text)
        elif args.command == "train":
            cfg = _config(args, train_pool=args.train_pool, test_pool=args.test_pool, p=args.p,
                          allow_cross_pairing=args.allow_cross_pairing)
            result = run_training(cfg)
            _emit(write_metrics_csv, result.records, args.out)
            if args.save_params:
                save_params(result.network, args.save_params)
            print(f"final test error {result.final_error:.2f}%  "
                  f"best {result.best_error:.2f}%", file=sys.stderr)
        elif args.command == "sweep":
            rows = sweep(_config(args), args.p_grid)
            _emit(write_sweep_csv, rows, args.out)
    except (MPDropoutError, OSError) as exc:
        print(f"mpdropout: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
