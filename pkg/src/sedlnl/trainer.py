"""Epoch orchestration: warm-up cross-entropy, then selection, correction and re-weighting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import model as M
from .dataset import TrainingView, augment, feature_stats
from .errors import ConfigError, NonFiniteLossError
from .reweight import CorrectionPlan, CorrectionState, build_plan
from .selection import (
    EpochProbe,
    Partition,
    ThresholdState,
    local_thresholds,
    make_probe,
    partition,
    update_thresholds,
)

log = logging.getLogger(__name__)

METHODS = ("sed", "standard")


@dataclass(frozen=True)
class AblationSpec:
    """Components to switch off. All False is the full method."""

    no_local_threshold: bool = False
    no_global_threshold: bool = False
    no_threshold_ema: bool = False
    no_scr: bool = False
    no_reweight: bool = False
    no_distribution_ema: bool = False
    no_class_balance: bool = False
    no_consistency: bool = False

    @classmethod
    def flag_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def enabled(self) -> List[str]:
        return [name for name in self.flag_names() if getattr(self, name)]


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 60
    warmup_epochs: int = 10
    batch_size: int = 128
    base_lr: float = 0.05
    weight_decay: float = 5e-4
    momentum: float = 0.9
    ema_m: float = 0.99
    teacher_alpha: float = 0.95
    lambda_max: float = 1.0
    hidden: Tuple[int, ...] = (64, 64)
    seed: int = 0
    method: str = "sed"
    ablation: AblationSpec = field(default_factory=AblationSpec)

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("total_epochs", "must be at least 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("warmup_epochs", "must satisfy 0 <= warmup_epochs < total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be at least 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr", "must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum", "must lie in [0, 1)")
        if not 0 <= self.ema_m < 1:
            raise ConfigError("ema_m", "must lie in [0, 1)")
        if not 0 <= self.teacher_alpha <= 1:
            raise ConfigError("teacher_alpha", "must lie in [0, 1]")
        if self.lambda_max <= 0:
            raise ConfigError("lambda_max", "must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden", "layer widths must be positive")
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {METHODS}")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    T_global: float
    local_T: np.ndarray
    clean_count: int
    class_clean_counts: np.ndarray
    loss_clean: float
    loss_noisy: float
    loss_reg: float
    phase: str
    # filled in by an evaluator that has ground truth; the trainer never does
    precision: float = float("nan")
    recall: float = float("nan")
    class_precision: Optional[np.ndarray] = None
    class_recall: Optional[np.ndarray] = None
    test_acc: float = float("nan")


@dataclass
class EpochArtifacts:
    """Frozen per-epoch state handed to observers (metrics, CSV writers)."""

    record: EpochRecord
    probe: EpochProbe
    partition: Partition
    plan: CorrectionPlan
    correction: CorrectionState
    noisy_counts: np.ndarray
    student: M.ModelParams


@dataclass(frozen=True)
class BatchLoss:
    clean: float
    noisy: float
    reg: float
    grads: M.ModelParams

    @property
    def total(self) -> float:
        return self.clean + self.noisy + self.reg


def composite_loss_and_grads(
    params: M.ModelParams,
    x_clean_weak: np.ndarray,
    y_clean: np.ndarray,
    x_noisy_strong: np.ndarray,
    y_noisy_corr: np.ndarray,
    w_noisy: np.ndarray,
    x_clean_strong: Optional[np.ndarray],
    y_clean_corr: Optional[np.ndarray],
    w_clean: Optional[np.ndarray],
    weight_decay: float = 0.0,
) -> BatchLoss:
    """Clean CE + weighted noisy CE + weighted consistency term, each averaged over its own subset.

    Empty subsets contribute zero. Pass ``None`` for the consistency inputs to drop
    that term. One forward/backward pass covers all three terms.
    """
    nc, nn = len(y_clean), len(y_noisy_corr)
    use_reg = x_clean_strong is not None
    parts_x = [x_clean_weak, x_noisy_strong]
    parts_y = [y_clean, y_noisy_corr]
    coef = [np.full(nc, 1.0 / max(nc, 1)), np.asarray(w_noisy, dtype=np.float64) / max(nn, 1)]
    if use_reg:
        parts_x.append(x_clean_strong)
        parts_y.append(y_clean_corr)
        coef.append(np.asarray(w_clean, dtype=np.float64) / max(nc, 1))
    X = np.vstack(parts_x)
    y = np.concatenate(parts_y).astype(np.int64)
    c = np.concatenate(coef)
    nll, grads = M.nll_and_grads(params, X, y, c)
    terms = c * nll
    l_clean = float(terms[:nc].sum())
    l_noisy = float(terms[nc : nc + nn].sum())
    l_reg = float(terms[nc + nn :].sum()) if use_reg else 0.0
    return BatchLoss(l_clean, l_noisy, l_reg, M.add_weight_decay(grads, params, weight_decay))


def loss_clean(params, x_weak, y_given) -> float:
    if len(y_given) == 0:
        return 0.0
    return M.loss_and_grads(params, x_weak, y_given, np.ones(len(y_given)))[0]


def loss_noisy(params, x_strong, y_corr, weights) -> float:
    if len(y_corr) == 0:
        return 0.0
    return M.loss_and_grads(params, x_strong, y_corr, weights)[0]


# same kernel, evaluated on strong views of the clean subset
loss_reg = loss_noisy


class Trainer:
    """Owns the student, teacher, optimizer and both EMA states for one run."""

    def __init__(self, data: TrainingView, config: TrainConfig):
        self.data = data
        self.config = config
        C = data.class_count
        ss = np.random.SeedSequence(config.seed)
        init_ss, shuffle_ss, aug_ss = ss.spawn(3)
        dims = [data.features.shape[1], *config.hidden, C]
        self.student = M.init_params(dims, int(init_ss.generate_state(1)[0]))
        self.teacher = self.student.map(np.copy)
        self.opt = M.init_optimizer(self.student, config.base_lr, config.weight_decay, config.momentum)
        ab = config.ablation
        self.thresholds = ThresholdState.initial(C, 0.0 if ab.no_threshold_ema else config.ema_m)
        self.correction = CorrectionState.initial(
            C, 0.0 if ab.no_distribution_ema else config.ema_m, config.lambda_max
        )
        self.shuffle_rng = np.random.default_rng(shuffle_ss)
        self.aug_rng = np.random.default_rng(aug_ss)
        self.stats = feature_stats(data.features)
        self.epoch = 0

    # ---------------------------------------------------------------- per-epoch planning

    def _local_T(self) -> np.ndarray:
        ab = self.config.ablation
        st = self.thresholds
        C = len(st.class_E)
        if ab.no_local_threshold:
            return np.full(C, st.global_T)
        if ab.no_global_threshold:
            return st.class_E / st.class_E.max() / C
        return local_thresholds(st)

    def plan_epoch(self):
        """Probe, update thresholds, partition, correct labels and weigh samples."""
        ab = self.config.ablation
        data = self.data
        probs = M.predict_proba(self.student, data.features)
        probe = make_probe(probs, data.given_labels)
        self.thresholds = update_thresholds(self.thresholds, probe, self.epoch)
        local_T = self._local_T()
        part = partition(probe, data.given_labels, local_T)
        plan, self.correction, stats = build_plan(
            self.student,
            self.teacher,
            data,
            part,
            self.correction,
            epoch=self.epoch,
            student_probs=probs,
            pooled=ab.no_class_balance,
            reweight=not ab.no_reweight,
        )
        return probe, local_T, part, plan, stats.counts

    def is_selection_epoch(self) -> bool:
        return self.config.method == "sed" and self.epoch >= self.config.warmup_epochs

    # ---------------------------------------------------------------- optimization

    def _step(self, grads: M.ModelParams, lr: float) -> None:
        self.student, self.opt = M.sgd_step(self.opt, self.student, grads, lr)
        self.teacher = M.teacher_update(self.teacher, self.student, self.config.teacher_alpha)

    def _check(self, batch_index: int, loss: BatchLoss) -> None:
        if not np.isfinite(loss.total):
            raise NonFiniteLossError(
                self.epoch, batch_index, {"clean": loss.clean, "noisy": loss.noisy, "reg": loss.reg}
            )

    def _batches(self) -> List[np.ndarray]:
        order = self.shuffle_rng.permutation(len(self.data))
        bs = self.config.batch_size
        return [order[i : i + bs] for i in range(0, len(order), bs)]

    def warmup_epoch(self, lr: float) -> Tuple[float, float, float]:
        X, y = self.data.features, self.data.given_labels
        wd = self.config.weight_decay
        total = 0.0
        batches = self._batches()
        for b, idx in enumerate(batches):
            xb = augment(X[idx], "weak", self.stats, self.aug_rng)
            loss, grads = M.loss_and_grads(self.student, xb, y[idx], np.ones(len(idx)), wd)
            if not np.isfinite(loss):
                raise NonFiniteLossError(self.epoch, b, {"clean": loss})
            self._step(grads, lr)
            total += loss
        return total / len(batches), 0.0, 0.0

    def sed_epoch(self, lr: float, part: Partition, plan: CorrectionPlan) -> Tuple[float, float, float]:
        ab = self.config.ablation
        X, y = self.data.features, self.data.given_labels
        is_clean = part.selected_mask(len(self.data))
        use_noisy = not ab.no_scr
        use_reg = not (ab.no_scr or ab.no_consistency)
        sums = np.zeros(3)
        batches = self._batches()
        for b, idx in enumerate(batches):
            ci = idx[is_clean[idx]]
            ni = idx[~is_clean[idx]] if use_noisy else idx[:0]
            x_cw = augment(X[ci], "weak", self.stats, self.aug_rng)
            x_ns = augment(X[ni], "strong", self.stats, self.aug_rng)
            x_cs = augment(X[ci], "strong", self.stats, self.aug_rng) if use_reg else None
            loss = composite_loss_and_grads(
                self.student,
                x_cw,
                y[ci],
                x_ns,
                plan.corrected_labels[ni],
                plan.weights[ni],
                x_cs,
                plan.corrected_labels[ci] if use_reg else None,
                plan.weights[ci] if use_reg else None,
                self.config.weight_decay,
            )
            self._check(b, loss)
            self._step(loss.grads, lr)
            sums += (loss.clean, loss.noisy, loss.reg)
        return tuple(sums / len(batches))

    def run_epoch(self) -> EpochArtifacts:
        cfg = self.config
        if self.epoch >= cfg.total_epochs:
            raise RuntimeError("training already finished")
        lr = M.cosine_lr(self.epoch, cfg.total_epochs, cfg.base_lr)
        probe, local_T, part, plan, noisy_counts = self.plan_epoch()
        correction = self.correction
        if self.is_selection_epoch():
            phase = "sed"
            losses = self.sed_epoch(lr, part, plan)
        else:
            phase = "warmup" if cfg.method == "sed" else "standard"
            losses = self.warmup_epoch(lr)
        C = self.data.class_count
        record = EpochRecord(
            epoch=self.epoch,
            lr=lr,
            T_global=self.thresholds.global_T,
            local_T=local_T,
            clean_count=len(part.clean_indices),
            class_clean_counts=np.bincount(self.data.given_labels[part.clean_indices], minlength=C),
            loss_clean=losses[0],
            loss_noisy=losses[1],
            loss_reg=losses[2],
            phase=phase,
        )
        self.epoch += 1
        return EpochArtifacts(record, probe, part, plan, correction, noisy_counts, self.student)

    def fit(self, on_epoch: Optional[Callable[[EpochArtifacts], None]] = None) -> List[EpochRecord]:
        records = []
        while self.epoch < self.config.total_epochs:
            art = self.run_epoch()
            if on_epoch is not None:
                on_epoch(art)
            records.append(art.record)
            log.debug("epoch %d T=%.4f clean=%d", art.record.epoch, art.record.T_global, art.record.clean_count)
        return records

    # ---------------------------------------------------------------- resume support

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {
            "thresholds.class_E": self.thresholds.class_E,
            "correction.mu": self.correction.mu,
            "correction.sigma2": self.correction.sigma2,
        }

    def state_meta(self) -> dict:
        return {
            "epoch": self.epoch,
            "thresholds.global_T": self.thresholds.global_T,
            "thresholds.epoch_index": self.thresholds.epoch_index,
            "correction.epoch_index": self.correction.epoch_index,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "aug_rng": self.aug_rng.bit_generator.state,
        }

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = self.state_meta()
        meta.update(extra_meta or {})
        M.save_checkpoint(path, self.student, self.teacher, self.opt, self.state_arrays(), meta)

    def restore(self, path) -> dict:
        student, teacher, opt, arrays, meta = M.load_checkpoint(path)
        if student.dims != self.student.dims:
            raise ValueError(f"checkpoint dims {student.dims} do not match {self.student.dims}")
        self.student, self.teacher, self.opt = student, teacher, opt
        self.thresholds = replace(
            self.thresholds,
            global_T=float(meta["thresholds.global_T"]),
            class_E=arrays["thresholds.class_E"],
            epoch_index=int(meta["thresholds.epoch_index"]),
        )
        self.correction = replace(
            self.correction,
            mu=arrays["correction.mu"],
            sigma2=arrays["correction.sigma2"],
            epoch_index=int(meta["correction.epoch_index"]),
        )
        self.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
        self.aug_rng.bit_generator.state = meta["aug_rng"]
        self.epoch = int(meta["epoch"])
        return meta
