"""Mean-teacher label correction and truncated-normal sample weights."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .dataset import TrainingView
from .model import ModelParams, TeacherParams, predict_proba

SIGMA2_FLOOR = 1e-4


@dataclass(frozen=True)
class CorrectionState:
    mu: np.ndarray
    sigma2: np.ndarray
    ema_m: float = 0.99
    lambda_max: float = 1.0
    epoch_index: int = 0

    @classmethod
    def initial(cls, class_count: int, ema_m: float = 0.99, lambda_max: float = 1.0) -> "CorrectionState":
        return cls(np.full(class_count, 1.0 / class_count), np.ones(class_count), ema_m, lambda_max, 0)


@dataclass(frozen=True)
class CorrectionPlan:
    corrected_labels: np.ndarray
    correction_conf: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class BatchStats:
    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    counts: np.ndarray


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(probs, axis=1)


def correct_labels(teacher: TeacherParams, data: TrainingView) -> np.ndarray:
    return argmax_labels(predict_proba(teacher, data.features))


def batch_stats(
    correction_conf: np.ndarray, corrected_labels: np.ndarray, noisy_indices: np.ndarray, class_count: int
) -> BatchStats:
    """Class-conditional mean and (population) variance of confidences over the noisy subset."""
    conf = np.asarray(correction_conf)[noisy_indices]
    lab = np.asarray(corrected_labels)[noisy_indices]
    counts = np.bincount(lab, minlength=class_count)
    sums = np.bincount(lab, weights=conf, minlength=class_count)
    safe = np.maximum(counts, 1)
    mu_hat = np.where(counts > 0, sums / safe, 0.0)
    dev2 = (conf - mu_hat[lab]) ** 2
    sigma2_hat = np.where(counts > 0, np.bincount(lab, weights=dev2, minlength=class_count) / safe, 0.0)
    return BatchStats(mu_hat, sigma2_hat, counts)


def pooled_stats(correction_conf: np.ndarray, noisy_indices: np.ndarray, class_count: int) -> BatchStats:
    """One distribution shared by every class (class-balance ablation)."""
    conf = np.asarray(correction_conf)[noisy_indices]
    n = conf.size
    mu = conf.mean() if n else 0.0
    var = conf.var() if n else 0.0
    return BatchStats(np.full(class_count, mu), np.full(class_count, var), np.full(class_count, n))


def update_distribution(state: CorrectionState, stats: BatchStats, epoch: Optional[int] = None) -> CorrectionState:
    m = state.ema_m
    seen = stats.counts > 0
    mu = np.where(seen, m * state.mu + (1.0 - m) * stats.mu_hat, state.mu)
    sigma2 = np.where(seen, m * state.sigma2 + (1.0 - m) * stats.sigma2_hat, state.sigma2)
    return replace(state, mu=mu, sigma2=sigma2, epoch_index=state.epoch_index if epoch is None else epoch)


def sample_weights(
    conf: np.ndarray, classes: np.ndarray, mu: np.ndarray, sigma2: np.ndarray, lambda_max: float
) -> np.ndarray:
    """Truncated-normal weight: ``lambda_max`` at or above the class mean, Gaussian tail below.

    Tail values are kept strictly inside ``(0, lambda_max)``: underflow is lifted
    to the smallest normal float and round-up to ``lambda_max`` is pulled one ulp down.
    """
    conf = np.asarray(conf, dtype=np.float64)
    m = np.asarray(mu, dtype=np.float64)[classes]
    s2 = np.maximum(np.asarray(sigma2, dtype=np.float64)[classes], SIGMA2_FLOOR)
    tail = lambda_max * np.exp((conf - m) ** 2 / (-2.0 * s2))
    tail = np.clip(tail, np.finfo(np.float64).tiny, np.nextafter(lambda_max, 0.0))
    return np.where(conf < m, tail, lambda_max)


def sample_weight(conf: float, cls: int, state: CorrectionState) -> float:
    return float(sample_weights(np.array([conf]), np.array([cls]), state.mu, state.sigma2, state.lambda_max)[0])


def build_plan(
    student: ModelParams,
    teacher: TeacherParams,
    data: TrainingView,
    part,
    state: CorrectionState,
    epoch: int = 1,
    student_probs: Optional[np.ndarray] = None,
    teacher_probs: Optional[np.ndarray] = None,
    pooled: bool = False,
    reweight: bool = True,
) -> Tuple[CorrectionPlan, CorrectionState, BatchStats]:
    """Correct labels with the teacher, refresh the per-class distribution, weigh every sample.

    At ``epoch == 0`` the distribution keeps its initial values. Empty noisy
    subsets leave the state untouched.
    """
    C = data.class_count
    if student_probs is None:
        student_probs = predict_proba(student, data.features)
    if teacher_probs is None:
        teacher_probs = predict_proba(teacher, data.features)
    corrected = argmax_labels(teacher_probs)
    conf = student_probs[np.arange(len(corrected)), corrected]

    if pooled:
        stats = pooled_stats(conf, part.noisy_indices, C)
    else:
        stats = batch_stats(conf, corrected, part.noisy_indices, C)
    if epoch > 0:
        state = update_distribution(state, stats, epoch)

    if reweight:
        weights = sample_weights(conf, corrected, state.mu, state.sigma2, state.lambda_max)
    else:
        weights = np.full(len(corrected), float(state.lambda_max))
    return CorrectionPlan(corrected, conf, weights), state, stats
