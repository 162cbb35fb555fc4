"""Command-line front end.

Subcommands:
  bench      run an experiment described by a JSON config file
  simulate   run a synthetic-setting experiment from flags
  calibrate  fit a base forest plus one calibrator from CSV data
  predict    produce intervals for new rows from a saved model
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .data import load_csv
from .harness import (
    ExperimentConfig,
    calibrate_from_data,
    canonical_method,
    load_model,
    run_experiment,
    save_model,
    write_report,
)
from .simgen import SETTING_KEYS


def _print_summary(report) -> None:
    for method, stats in report.aggregates.items():
        parts = [f"{method}:"]
        for name in ("amc", "ccad", "smis_finite", "mean_width"):
            agg = stats[name]
            if agg["mean"] is not None:
                parts.append(f"{name}={agg['mean']:.4f} (±{agg['two_se']:.4f})")
        print(" ".join(parts))


def _cmd_bench(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    report = run_experiment(config, workers=args.workers)
    if args.out:
        write_report(report, args.out, format=args.format, canonical=args.canonical)
        print(f"wrote {args.out}")
    _print_summary(report)
    return 0


def _cmd_simulate(args) -> int:
    config = ExperimentConfig(
        setting=args.setting,
        p=args.p,
        d=args.d,
        n_train=args.n_train,
        n_cal=args.n_cal,
        n_test=args.n_test,
        alpha=args.alpha,
        replications=args.replications,
        methods=tuple(args.methods.split(",")),
        seed=args.seed,
        base_trees=args.base_trees,
        loforest_trees=args.loforest_trees,
        min_samples_split=args.min_samples_split,
        mondrian_bins=args.mondrian_bins,
        ccad=not args.no_ccad,
        b_y=args.b_y,
        workers=args.workers,
    )
    report = run_experiment(config)
    if args.out:
        write_report(report, args.out, format=args.format, canonical=args.canonical)
        print(f"wrote {args.out}")
    _print_summary(report)
    return 0


def _cmd_calibrate(args) -> int:
    train = load_csv(args.train, target=args.target)
    cal = load_csv(args.cal, target=args.target)
    model = calibrate_from_data(
        train,
        cal,
        method=args.method,
        alpha=args.alpha,
        seed=args.seed,
        base_trees=args.base_trees,
        loforest_trees=args.loforest_trees,
        min_samples_split=args.min_samples_split,
        mondrian_bins=args.mondrian_bins,
    )
    save_model(model, args.model_out)
    print(f"wrote {args.model_out} ({canonical_method(args.method)}, alpha={args.alpha})")
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    data = _read_feature_csv(args.in_path, model)
    iv = model.intervals(data)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center", "lower", "upper", "infinite"])
        infinite = iv.infinite
        for i in range(len(iv)):
            if infinite[i]:
                writer.writerow([repr(float(iv.center[i])), "", "", 1])
            else:
                writer.writerow(
                    [
                        repr(float(iv.center[i])),
                        repr(float(iv.lower[i])),
                        repr(float(iv.upper[i])),
                        0,
                    ]
                )
    print(f"wrote {args.out} ({len(iv)} intervals)")
    return 0


def _read_feature_csv(path, model) -> np.ndarray:
    """Read prediction rows, selecting the model's feature columns by name
    (a stray target column is ignored); falls back to positional order for
    headerless alignment."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [row for row in reader if row]
    wanted = list(model.feature_names)
    if set(wanted).issubset(header):
        cols = [header.index(name) for name in wanted]
    elif len(header) == len(wanted):
        cols = list(range(len(wanted)))
    else:
        raise ValueError(
            f"{path}: columns {header!r} do not match model features {wanted!r}"
        )
    out = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = float(row[c])
    return out


def _add_report_flags(parser) -> None:
    parser.add_argument("--out", help="report output path")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument(
        "--canonical", action="store_true", help="zero wall-time fields in the report"
    )
    parser.add_argument("--workers", type=int, default=None, help="replication workers")


def _add_hyper_flags(parser) -> None:
    parser.add_argument("--base-trees", type=int, default=100)
    parser.add_argument("--loforest-trees", type=int, default=100)
    parser.add_argument("--min-samples-split", type=int, default=100)
    parser.add_argument("--mondrian-bins", type=int, default=30)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clover",
        description="Adaptive prediction intervals from conformity-score trees and forests",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("simulate", help="run a synthetic-setting experiment")
    p.add_argument("--setting", required=True, choices=SETTING_KEYS)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-cal", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--methods", default="reg-split,locart,loforest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-ccad", action="store_true")
    p.add_argument("--b-y", type=int, default=1000)
    _add_hyper_flags(p)
    _add_report_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="fit a model bundle from CSV data")
    p.add_argument("--train", required=True)
    p.add_argument("--cal", required=True)
    p.add_argument("--target", default=None, help="target column (default: last)")
    p.add_argument("--method", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    _add_hyper_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("predict", help="intervals for new rows from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
