"""Run orchestration, ground-truth evaluation and on-disk reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import metrics
from .config import RunConfig, build_datasets, load_config
from .dataset import LabeledDataset
from .errors import NonFiniteLossError
from .trainer import EpochArtifacts, EpochRecord, Trainer

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPOCHS_HEADER = [
    "epoch", "lr", "T_global", "clean_count", "precision", "recall",
    "test_acc", "loss_clean", "loss_noisy", "loss_reg",
]
THRESHOLDS_HEADER = [
    "epoch", "T_global", "class", "local_threshold", "clean_count", "class_precision", "class_recall",
]
DISTRIBUTIONS_HEADER = [
    "epoch", "class", "mu", "sigma2", "noisy_count", "corrected_count",
    "weight_min", "weight_mean", "weight_max",
]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _py(v):
    if isinstance(v, (bool, np.bool_, int, np.integer)):
        return int(v)
    return float(v)


def _csv_text(header: Sequence[str], rows: List[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


@dataclass
class RunReport:
    config: dict
    records: List[EpochRecord]
    final_test_acc: float
    final_precision: float
    final_recall: float
    final_class_precision: List[float]
    final_class_recall: List[float]
    final_class_clean_counts: List[int]
    wall_seconds: float
    run_dir: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "final": {
                "test_acc": self.final_test_acc,
                "precision": self.final_precision,
                "recall": self.final_recall,
                "class_precision": self.final_class_precision,
                "class_recall": self.final_class_recall,
                "class_clean_counts": self.final_class_clean_counts,
                "balance_ratio": _finite_or_none(metrics.balance_ratio(self.final_class_clean_counts)),
            },
            "epochs": [_record_json(r) for r in self.records],
            "wall_seconds": self.wall_seconds,
            "files": {
                "epochs.csv": EPOCHS_HEADER,
                "thresholds.csv": THRESHOLDS_HEADER,
                "distributions.csv": DISTRIBUTIONS_HEADER,
            },
        }


def _finite_or_none(x):
    return x if math.isfinite(x) else None


def _record_json(r: EpochRecord) -> dict:
    return {
        "epoch": r.epoch,
        "phase": r.phase,
        "lr": r.lr,
        "T_global": r.T_global,
        "local_T": [float(v) for v in r.local_T],
        "clean_count": r.clean_count,
        "class_clean_counts": [int(v) for v in r.class_clean_counts],
        "precision": r.precision,
        "recall": r.recall,
        "class_precision": [float(v) for v in r.class_precision],
        "class_recall": [float(v) for v in r.class_recall],
        "test_acc": r.test_acc,
        "loss_clean": r.loss_clean,
        "loss_noisy": r.loss_noisy,
        "loss_reg": r.loss_reg,
    }


class RunLogger:
    """Evaluates each epoch against ground truth and accumulates CSV rows."""

    def __init__(self, train: LabeledDataset, test: LabeledDataset):
        self.train = train
        self.test = test
        self.epochs: List[list] = []
        self.thresholds: List[list] = []
        self.distributions: List[list] = []

    def __call__(self, art: EpochArtifacts) -> None:
        r = art.record
        r.precision, r.recall, r.class_precision = metrics.selection_metrics(art.partition, self.train)
        r.class_recall = metrics.class_recall(art.partition, self.train)
        r.test_acc = metrics.accuracy(art.student, self.test)
        self.epochs.append(
            [_py(v) for v in [r.epoch, r.lr, r.T_global, r.clean_count, r.precision, r.recall,
             r.test_acc, r.loss_clean, r.loss_noisy, r.loss_reg]]
        )
        C = len(r.local_T)
        for c in range(C):
            row = [r.epoch, r.T_global, c, r.local_T[c], r.class_clean_counts[c],
                   r.class_precision[c], r.class_recall[c]]
            self.thresholds.append([_py(v) for v in row])
        plan = art.plan
        for c in range(C):
            w = plan.weights[plan.corrected_labels == c]
            wstats = (w.min(), w.mean(), w.max()) if w.size else (math.nan, math.nan, math.nan)
            row = [r.epoch, c, art.correction.mu[c], art.correction.sigma2[c], art.noisy_counts[c], w.size, *wstats]
            self.distributions.append([_py(v) for v in row])

    def rows(self) -> dict:
        return {"epochs": self.epochs, "thresholds": self.thresholds, "distributions": self.distributions}

    def load_rows(self, rows: dict) -> None:
        self.epochs = [list(r) for r in rows["epochs"]]
        self.thresholds = [list(r) for r in rows["thresholds"]]
        self.distributions = [list(r) for r in rows["distributions"]]

    def write(self, run_dir: Path) -> None:
        (run_dir / "epochs.csv").write_text(_csv_text(EPOCHS_HEADER, self.epochs))
        (run_dir / "thresholds.csv").write_text(_csv_text(THRESHOLDS_HEADER, self.thresholds))
        (run_dir / "distributions.csv").write_text(_csv_text(DISTRIBUTIONS_HEADER, self.distributions))


def _new_run_dir(root: Path, name: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{name}-{stamp}"
    k = 1
    while path.exists():
        path = root / f"{name}-{stamp}-{k}"
        k += 1
    path.mkdir()
    return path


def _record_from_row(row, epoch_meta) -> EpochRecord:
    epoch, lr, T, count, prec, rec, acc, lc, ln, lr_ = row
    return EpochRecord(
        epoch=int(epoch), lr=lr, T_global=T,
        local_T=np.asarray(epoch_meta["local_T"]), clean_count=int(count),
        class_clean_counts=np.asarray(epoch_meta["class_clean_counts"]),
        loss_clean=lc, loss_noisy=ln, loss_reg=lr_, phase=epoch_meta["phase"],
        precision=prec, recall=rec, class_precision=np.asarray(epoch_meta["class_precision"]),
        class_recall=np.asarray(epoch_meta["class_recall"]),
        test_acc=acc,
    )


def run(
    config: RunConfig,
    write: bool = True,
    resume: Optional[str] = None,
    run_dir: Optional[Path] = None,
) -> RunReport:
    """Train one configuration end to end and (optionally) persist its artifacts."""
    start = time.perf_counter()
    train, test = build_datasets(config)
    trainer = Trainer(train.training_view(), config.train)
    logger = RunLogger(train, test)
    records: List[EpochRecord] = []
    if resume:
        meta = trainer.restore(resume)
        logger.load_rows(meta["rows"])
        records = [_record_from_row(row, em) for row, em in zip(logger.epochs, meta["records"])]

    if write and run_dir is None:
        run_dir = _new_run_dir(config.resolved_output_root(), config.name)
    elif write:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)

    def on_epoch(art: EpochArtifacts) -> None:
        logger(art)
        records.append(art.record)
        every = config.save_every
        if write and every and trainer.epoch % every == 0:
            trainer.save(
                run_dir / f"checkpoint-epoch{trainer.epoch:04d}.npz",
                {"rows": logger.rows(), "records": [_record_json(r) for r in records], "config": config.echo()},
            )

    try:
        trainer.fit(on_epoch)
    except NonFiniteLossError as exc:
        if write:
            (run_dir / "diagnostic.json").write_text(
                json.dumps({"epoch": exc.epoch, "batch_index": exc.batch_index, "terms": exc.terms}, indent=2)
            )
            logger.write(run_dir)
        raise

    last = records[-1]
    report = RunReport(
        config=config.echo(),
        records=records,
        final_test_acc=last.test_acc,
        final_precision=last.precision,
        final_recall=last.recall,
        final_class_precision=[float(v) for v in last.class_precision],
        final_class_recall=[float(v) for v in (last.class_recall if last.class_recall is not None else [])],
        final_class_clean_counts=[int(v) for v in last.class_clean_counts],
        wall_seconds=time.perf_counter() - start,
        run_dir=str(run_dir) if run_dir else None,
    )
    if write:
        logger.write(run_dir)
        trainer.save(
            run_dir / "final.npz",
            {"rows": logger.rows(), "records": [_record_json(r) for r in records], "config": config.echo()},
        )
        (run_dir / "report.json").write_text(json.dumps(report.to_json(), indent=2, allow_nan=True) + "\n")
        log.info("run %s finished in %.2fs -> %s", config.name, report.wall_seconds, run_dir)
    return report


def run_file(config_path, **overrides) -> RunReport:
    return run(load_config(config_path, **overrides))


def _sweep_one(args):
    path, seed = args
    overrides = {} if seed is None else {"seed": seed, "name": f"{Path(path).stem}-s{seed}"}
    report = run_file(path, **overrides)
    return {
        "config": str(path),
        "seed": report.config["seed"],
        "run_dir": report.run_dir,
        "test_acc": report.final_test_acc,
        "precision": report.final_precision,
        "recall": report.final_recall,
    }


def sweep(config_dir, seeds: Optional[Sequence[int]] = None, jobs: int = 1) -> List[dict]:
    paths = sorted(Path(config_dir).glob("*.toml"))
    if not paths:
        raise FileNotFoundError(f"no *.toml configs in {config_dir}")
    for p in paths:
        load_config(p)  # validate everything before spending compute
    tasks = [(p, s) for p in paths for s in (seeds if seeds else [None])]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, tasks))
    return [_sweep_one(t) for t in tasks]


class ComparisonError(ValueError):
    pass


_DATA_KEYS = (
    "seed", "class_count", "per_class", "dim", "spread", "radius", "test_per_class",
    "noise_kind", "noise_rate", "ood_class_count", "inner_noise_kind",
)


def load_report(run_dir) -> dict:
    path = Path(run_dir)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return json.loads(path.read_text())


def compare_runs(report_a: dict, report_b: dict) -> dict:
    """Signed differences ``b - a`` of the final metrics of two runs on the same data."""
    ca, cb = report_a["config"], report_b["config"]
    mismatched = [k for k in _DATA_KEYS if ca.get(k) != cb.get(k)]
    if mismatched:
        raise ComparisonError(f"runs differ in dataset spec or seed: {', '.join(mismatched)}")
    fa, fb = report_a["final"], report_b["final"]
    deltas = {}
    for key in ("test_acc", "precision", "recall", "balance_ratio"):
        a, b = fa.get(key), fb.get(key)
        deltas[key] = None if a is None or b is None else b - a
    for key in ("class_precision", "class_recall", "class_clean_counts"):
        deltas[key] = [b - a for a, b in zip(fa[key], fb[key])]
    differing = sorted(k for k in set(ca) | set(cb) if ca.get(k) != cb.get(k))
    return {"a": ca.get("name"), "b": cb.get("name"), "config_differences": differing, "delta_b_minus_a": deltas}
