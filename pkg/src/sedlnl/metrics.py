"""Ground-truth metrics. The only module that reads true labels or clean masks."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .dataset import LabeledDataset
from .model import ModelParams, predict_proba


def selection_metrics(part, ds: LabeledDataset) -> Tuple[float, float, np.ndarray]:
    """Precision and recall of the clean selection, plus per-class precision by given label.

    Empty selections have precision 1.0; an empty truly-clean set has recall 1.0.
    """
    truth = ds.clean_mask()
    selected = part.selected_mask(len(ds))
    hit = selected & truth
    n_sel, n_true, n_hit = selected.sum(), truth.sum(), hit.sum()
    precision = n_hit / n_sel if n_sel else 1.0
    recall = n_hit / n_true if n_true else 1.0
    C = ds.class_count
    sel_c = np.bincount(ds.given_labels[selected], minlength=C)
    hit_c = np.bincount(ds.given_labels[hit], minlength=C)
    per_class = np.where(sel_c > 0, hit_c / np.maximum(sel_c, 1), 1.0)
    return float(precision), float(recall), per_class


def class_recall(part, ds: LabeledDataset) -> np.ndarray:
    truth = ds.clean_mask()
    hit = part.selected_mask(len(ds)) & truth
    C = ds.class_count
    tot = np.bincount(ds.given_labels[truth], minlength=C)
    return np.where(tot > 0, np.bincount(ds.given_labels[hit], minlength=C) / np.maximum(tot, 1), 1.0)


def accuracy(params: ModelParams, ds: LabeledDataset) -> float:
    keep = ~ds.is_ood
    pred = np.argmax(predict_proba(params, ds.features[keep]), axis=1)
    return float(np.mean(pred == ds.true_labels[keep]))


def balance_ratio(class_counts) -> float:
    """max/min of per-class counts; inf when some class has none."""
    counts = np.asarray(class_counts, dtype=np.float64)
    lo = counts.min()
    return float(counts.max() / lo) if lo > 0 else float("inf")
