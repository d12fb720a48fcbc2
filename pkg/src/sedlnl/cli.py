"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as D
from . import harness
from .config import build_datasets, load_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sedlnl", description="Noisy-label training with adaptive selection and re-weighting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--resume", help="checkpoint (.npz) to continue from")
    r.add_argument("--save-every", type=int, help="write a checkpoint every N epochs")

    s = sub.add_parser("sweep", help="run every *.toml in a directory")
    s.add_argument("config_dir")
    s.add_argument("--seeds", help="comma-separated seeds applied to every config")
    s.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("compare", help="metric deltas between two finished runs (B - A)")
    c.add_argument("run_a")
    c.add_argument("run_b")

    e = sub.add_parser("export-dataset", help="write the training set of a configuration")
    e.add_argument("config")
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("csv", "bin"), default=None)
    e.add_argument("--test", action="store_true", help="export the clean test split instead")

    i = sub.add_parser("import-dataset", help="read a dataset file, print a summary, optionally convert it")
    i.add_argument("path")
    i.add_argument("--to", help="convert to this path (format from extension)")
    return p


def _format_for(path: str, explicit=None) -> str:
    if explicit:
        return explicit
    return "csv" if Path(path).suffix.lower() == ".csv" else "bin"


def _summary(ds: D.LabeledDataset) -> dict:
    ind = ~ds.is_ood
    return {
        "rows": len(ds),
        "dim": ds.dim,
        "class_count": ds.class_count,
        "ood_rows": int(ds.is_ood.sum()),
        "corrupted_in_distribution": int(np.sum(ds.given_labels[ind] != ds.true_labels[ind])),
        "given_label_counts": np.bincount(ds.given_labels, minlength=ds.class_count).tolist(),
    }


def _dispatch(args) -> int:
    if args.command == "run":
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.save_every is not None:
            overrides["save_every"] = args.save_every
        cfg = load_config(args.config, **overrides)
        report = harness.run(cfg, resume=args.resume)
        print(json.dumps({"run_dir": report.run_dir, "test_acc": report.final_test_acc,
                          "precision": report.final_precision, "recall": report.final_recall}))
        return EXIT_OK

    if args.command == "sweep":
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
        for row in harness.sweep(args.config_dir, seeds, args.jobs):
            print(json.dumps(row))
        return EXIT_OK

    if args.command == "compare":
        delta = harness.compare_runs(harness.load_report(args.run_a), harness.load_report(args.run_b))
        print(json.dumps(delta, indent=2))
        return EXIT_OK

    if args.command == "export-dataset":
        train, test = build_datasets(load_config(args.config))
        ds = test if args.test else train
        if _format_for(args.out, args.format) == "csv":
            D.save_csv(ds, args.out)
        else:
            D.save_binary(ds, args.out)
        print(json.dumps(_summary(ds)))
        return EXIT_OK

    if args.command == "import-dataset":
        ds = D.load_csv(args.path) if _format_for(args.path) == "csv" else D.load_binary(args.path)
        if args.to:
            (D.save_csv if _format_for(args.to) == "csv" else D.save_binary)(ds, args.to)
        print(json.dumps(_summary(ds)))
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.ComparisonError, FileNotFoundError, ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
