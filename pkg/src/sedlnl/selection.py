"""Self-adaptive, class-balanced sample selection.

A global threshold tracks the EMA of the mean probability assigned to the
given labels; per-class expectations rescale it into local thresholds, and a
sample is kept as clean when its given-label probability strictly exceeds the
local threshold of its given class.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import TrainingView
from .model import ModelParams, predict_proba


@dataclass(frozen=True)
class ThresholdState:
    global_T: float
    class_E: np.ndarray
    ema_m: float = 0.99
    epoch_index: int = 0

    @classmethod
    def initial(cls, class_count: int, ema_m: float = 0.99) -> "ThresholdState":
        return cls(1.0 / class_count, np.full(class_count, 1.0 / class_count), ema_m, 0)


@dataclass(frozen=True)
class EpochProbe:
    probs: np.ndarray
    given_label_prob: np.ndarray


@dataclass(frozen=True)
class Partition:
    clean_indices: np.ndarray
    noisy_indices: np.ndarray

    def selected_mask(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        mask[self.clean_indices] = True
        return mask


def make_probe(probs: np.ndarray, given_labels: np.ndarray) -> EpochProbe:
    return EpochProbe(probs, probs[np.arange(len(given_labels)), given_labels])


def probe_epoch(student: ModelParams, data: TrainingView) -> EpochProbe:
    return make_probe(predict_proba(student, data.features), data.given_labels)


def update_global_threshold(state: ThresholdState, probe: EpochProbe, epoch: int) -> ThresholdState:
    """Threshold for ``epoch``: ``1/C`` at epoch 0, otherwise one EMA step."""
    C = len(state.class_E)
    if epoch == 0:
        return replace(state, global_T=1.0 / C, epoch_index=0)
    m = state.ema_m
    T = m * state.global_T + (1.0 - m) * float(np.mean(probe.given_label_prob))
    return replace(state, global_T=T, epoch_index=epoch)


def update_class_expectations(state: ThresholdState, probe: EpochProbe, epoch: int) -> ThresholdState:
    # averages p^c over every sample, not only those labelled c
    C = len(state.class_E)
    if epoch == 0:
        return replace(state, class_E=np.full(C, 1.0 / C), epoch_index=0)
    m = state.ema_m
    E = m * state.class_E + (1.0 - m) * probe.probs.mean(axis=0)
    return replace(state, class_E=E, epoch_index=epoch)


def update_thresholds(state: ThresholdState, probe: EpochProbe, epoch: int) -> ThresholdState:
    return update_class_expectations(update_global_threshold(state, probe, epoch), probe, epoch)


def local_thresholds(state: ThresholdState) -> np.ndarray:
    E = np.asarray(state.class_E)
    return E / E.max() * state.global_T


def partition(probe: EpochProbe, given_labels: np.ndarray, local_T: np.ndarray) -> Partition:
    clean = probe.given_label_prob > np.asarray(local_T)[given_labels]
    return Partition(np.flatnonzero(clean), np.flatnonzero(~clean))
