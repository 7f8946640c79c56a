"""Command-line front end: train on a scenario file, evaluate a checkpoint.

`train` reads one dataset file plus its split manifest, fits the network,
and writes a checkpoint (and optionally the per-epoch training report as
JSON). `evaluate` reloads a checkpoint, scores one split, writes the JSON
metrics report, and optionally a pair of harness-compatible CDF tables so
the scores can be cross-checked with `cfcoex metrics`. Exit code 0 on
success, 1 on usage or input errors.
"""

import argparse
import logging
import sys

from .data import DataError, ScenarioData, load_splits
from .evaluate import evaluate_split, write_cdf_csv, write_report
from .model import load_checkpoint, save_checkpoint
from .train import TrainSettings, train_model

log = logging.getLogger("gnnpc.cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are plain errors (exit 1)
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_data(sub):
    sub.add_argument("--data", required=True, metavar="FILE",
                     help="scenario dataset (JSON-lines, .gz accepted)")
    sub.add_argument("--splits", required=True, metavar="FILE",
                     help="train/val/test split manifest (JSON)")


def build_parser():
    parser = _Parser(prog="gnnpc",
                     description="learned power control on exported datasets")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="fit a model on one scenario")
    _add_data(p)
    p.add_argument("--out", required=True, metavar="FILE",
                   help="checkpoint output path (.pt)")
    p.add_argument("--report", metavar="FILE",
                   help="write the per-epoch training report as JSON")
    p.add_argument("--power-weight", type=float, default=0.5, metavar="A",
                   help="mix of log-power vs objective regression in [0, 1] "
                        "(default 0.5)")
    p.add_argument("--constraint-weight", type=float, default=1.0,
                   choices=(0.0, 1.0), metavar="{0,1}",
                   help="rate-floor penalty on (1) or off (0); default 1")
    p.add_argument("--epochs", type=int, default=100, metavar="E",
                   help="training epochs (default 100)")
    p.add_argument("--batch-size", type=int, default=32, metavar="B",
                   help="minibatch size (default 32)")
    p.add_argument("--learning-rate", type=float, default=1e-4, metavar="LR",
                   help="AdamW learning rate (default 1e-4)")
    p.add_argument("--weight-decay", type=float, default=1e-4, metavar="WD",
                   help="AdamW weight decay (default 1e-4)")
    p.add_argument("--lr-schedule", default="constant",
                   choices=("constant", "cosine"),
                   help="anneal the learning rate to zero over the run "
                        "(cosine) or keep it fixed (default constant)")
    p.add_argument("--feature-noise", type=float, default=0.0, metavar="STD",
                   help="Gaussian jitter added to the standardized training "
                        "features, an augmentation for small datasets "
                        "(default 0, off)")
    p.add_argument("--penalty", type=float, default=1.0, metavar="RHO",
                   help="initial weight of the squared relative rate-floor "
                        "shortfall (default 1)")
    p.add_argument("--penalty-growth", type=float, default=1.5, metavar="G",
                   help="per-epoch penalty growth factor, 1 disables "
                        "(default 1.5)")
    p.add_argument("--penalty-cap", type=float, default=None, metavar="C",
                   help="penalty ceiling (default: 100x the initial weight)")
    p.add_argument("--seed", type=int, default=0, metavar="S",
                   help="training seed (default 0)")

    p = subs.add_parser("evaluate", help="score a checkpoint on one split")
    _add_data(p)
    p.add_argument("--checkpoint", required=True, metavar="FILE",
                   help="trained model (.pt)")
    p.add_argument("--out", required=True, metavar="FILE",
                   help="JSON metrics report output path")
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test"),
                   help="which split to score (default test)")
    p.add_argument("--cdf-prefix", metavar="PREFIX",
                   help="also write PREFIX_{analytical,predicted}.csv "
                        "CDF tables for cfcoex metrics")
    return parser


def _cmd_train(args):
    data = ScenarioData.load(args.data)
    splits = load_splits(args.splits)
    settings = TrainSettings(power_weight=args.power_weight,
                             constraint_weight=args.constraint_weight,
                             learning_rate=args.learning_rate,
                             weight_decay=args.weight_decay,
                             lr_schedule=args.lr_schedule,
                             feature_noise=args.feature_noise,
                             epochs=args.epochs,
                             batch_size=args.batch_size,
                             penalty=args.penalty,
                             penalty_growth=args.penalty_growth,
                             penalty_cap=args.penalty_cap,
                             seed=args.seed)
    result = train_model(data, splits, settings)
    save_checkpoint(args.out, result.model, result.standardizer,
                    settings=result.report["settings"],
                    extra={"dual": result.dual,
                           "config_digest": data.header.get("config_digest")})
    if args.report:
        write_report(result.report, args.report)
    final = result.report["final"]
    print(f"trained {settings.epochs} epochs | loss {final['total']:.4g} | "
          f"val violations {final.get('val_violation_rate', 0.0):.1%} | "
          f"checkpoint {args.out}")
    return 0


def _cmd_evaluate(args):
    data = ScenarioData.load(args.data)
    splits = load_splits(args.splits)
    model, standardizer, _ = load_checkpoint(args.checkpoint)
    report = evaluate_split(model, standardizer, data, splits[args.split],
                            split_name=args.split)
    report["checkpoint"] = args.checkpoint
    report["data"] = args.data
    if args.cdf_prefix:
        for side in ("analytical", "predicted"):
            path = f"{args.cdf_prefix}_{side}.csv"
            write_cdf_csv(report[f"{side}_ee"],
                          f"{side}:device_ee", path)
            report[f"{side}_cdf"] = path
    write_report(report, args.out)
    print(f"split {args.split} | KL {report['kl_divergence']:.4g} | "
          f"5th-percentile loss {report['p95_loss']:.4g} | "
          f"violations {report['violation_rate']:.1%}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_evaluate(args)
    except (DataError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
