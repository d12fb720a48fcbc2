"""Synthetic blob datasets, label-noise injection and vector augmentations."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError

NOISE_KINDS = ("symmetric", "asymmetric", "openset")

_BIN_MAGIC = b"SEDLNLDS"
_BIN_VERSION = 1
_BIN_HEADER = struct.Struct("<8sHIII")  # magic, version, N, d, C


@dataclass(frozen=True)
class TrainingView:
    """What the training loop is allowed to see: inputs and given labels only."""

    features: np.ndarray
    given_labels: np.ndarray
    class_count: int

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class LabeledDataset:
    features: np.ndarray
    true_labels: np.ndarray
    given_labels: np.ndarray
    is_ood: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.given_labels = np.asarray(self.given_labels, dtype=np.int64)
        self.is_ood = np.asarray(self.is_ood, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        if not (len(self.true_labels) == len(self.given_labels) == len(self.is_ood) == n):
            raise ValueError("label arrays must match the number of feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")
        if n and (self.given_labels.min() < 0 or self.given_labels.max() >= self.class_count):
            raise ValueError("given labels must lie in [0, class_count)")
        ind = ~self.is_ood
        if np.any(self.true_labels[ind] < 0) or np.any(self.true_labels[ind] >= self.class_count):
            raise ValueError("in-distribution true labels must lie in [0, class_count)")
        if np.any(self.true_labels[self.is_ood] != self.class_count):
            raise ValueError("out-of-distribution rows must carry the sentinel true label")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def clean_mask(self) -> np.ndarray:
        return (self.given_labels == self.true_labels) & ~self.is_ood

    def training_view(self) -> TrainingView:
        return TrainingView(self.features, self.given_labels.copy(), self.class_count)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    rate: float
    ood_class_count: int = 0
    inner: Optional["NoiseSpec"] = field(default=None)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError("noise_kind", f"unknown noise kind {self.kind!r}")
        if not 0.0 < self.rate < 1.0:
            raise ConfigError("noise_rate", f"rate must lie strictly inside (0, 1), got {self.rate}")
        if self.kind == "openset":
            if self.ood_class_count <= 0:
                raise ConfigError("ood_class_count", "openset noise needs ood_class_count > 0")
            if self.inner is None:
                raise ConfigError("inner_noise_kind", "openset noise needs a nested in-distribution spec")
            if self.inner.kind == "openset":
                raise ConfigError("inner_noise_kind", "nested spec must be symmetric or asymmetric")
        elif self.ood_class_count != 0:
            raise ConfigError("ood_class_count", "ood_class_count is only valid for openset noise")


def blob_means(class_count: int, dim: int, radius: float = 4.0, phase: float = 0.0) -> np.ndarray:
    """Class centres on a circle in the first two coordinates (a line when dim == 1)."""
    means = np.zeros((class_count, dim))
    if dim == 1:
        means[:, 0] = radius * (np.arange(class_count) - (class_count - 1) / 2.0)
        return means
    angles = phase + 2.0 * np.pi * np.arange(class_count) / class_count
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def generate_blobs(
    class_count: int,
    per_class: int,
    dim: int,
    spread: Sequence[float],
    seed: int,
    radius: float = 4.0,
) -> LabeledDataset:
    if class_count < 2:
        raise ConfigError("class_count", "need at least two classes")
    if per_class < 1:
        raise ConfigError("per_class", "need at least one sample per class")
    if dim < 1:
        raise ConfigError("dim", "feature dimension must be positive")
    spread = np.asarray(spread, dtype=np.float64)
    if spread.shape != (class_count,) or np.any(spread <= 0):
        raise ConfigError("spread", f"need {class_count} strictly positive spreads")
    if radius <= 0:
        raise ConfigError("radius", "radius must be positive")

    rng = np.random.default_rng(seed)
    means = blob_means(class_count, dim, radius)
    labels = np.repeat(np.arange(class_count), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim)) * spread[labels, None]
    return LabeledDataset(
        features=features,
        true_labels=labels,
        given_labels=labels.copy(),
        is_ood=np.zeros(labels.size, dtype=bool),
        class_count=class_count,
    )


def _flip_labels(labels: np.ndarray, spec: NoiseSpec, class_count: int, rng) -> np.ndarray:
    # exact-count corruption: round(rate * n) samples, chosen uniformly without replacement
    n = labels.size
    k = int(round(spec.rate * n))
    flipped = labels.copy()
    idx = rng.choice(n, size=k, replace=False)
    if spec.kind == "symmetric":
        offset = rng.integers(1, class_count, size=k)
        flipped[idx] = (labels[idx] + offset) % class_count
    else:
        flipped[idx] = (labels[idx] + 1) % class_count
    return flipped


def inject_noise(ds: LabeledDataset, spec: NoiseSpec, seed: int) -> LabeledDataset:
    if np.any(ds.given_labels != ds.true_labels) or ds.is_ood.any():
        raise ValueError("noise can only be injected into a clean dataset")
    rng = np.random.default_rng(seed)
    C = ds.class_count

    if spec.kind != "openset":
        return replace(ds, given_labels=_flip_labels(ds.true_labels, spec, C, rng))

    given = _flip_labels(ds.true_labels, spec.inner, C, rng)
    centres = np.stack([ds.features[ds.true_labels == c].mean(axis=0) for c in range(C)])
    within = np.mean([ds.features[ds.true_labels == c].std(axis=0).mean() for c in range(C)])
    outer = 1.75 * np.linalg.norm(centres, axis=1).max() + 3.0 * within
    ood_means = blob_means(spec.ood_class_count, ds.dim, outer, phase=np.pi / C)
    per_class = len(ds) // C
    ood_ids = np.repeat(np.arange(spec.ood_class_count), per_class)
    ood_x = ood_means[ood_ids] + rng.standard_normal((ood_ids.size, ds.dim)) * within
    ood_given = rng.integers(0, C, size=ood_ids.size)
    return LabeledDataset(
        features=np.vstack([ds.features, ood_x]),
        true_labels=np.concatenate([ds.true_labels, np.full(ood_ids.size, C)]),
        given_labels=np.concatenate([given, ood_given]),
        is_ood=np.concatenate([ds.is_ood, np.ones(ood_ids.size, dtype=bool)]),
        class_count=C,
    )


def augment(x: np.ndarray, strength: str, stats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Jitter a vector (or a batch of row vectors).

    ``weak`` adds Gaussian noise at 5% of the per-dimension std; ``strong`` adds
    25% and then zeroes each coordinate independently with probability 0.1.
    """
    stats = np.asarray(stats, dtype=np.float64)
    if np.any(stats <= 0):
        raise ValueError("augmentation stats must be strictly positive")
    x = np.asarray(x, dtype=np.float64)
    if strength == "weak":
        return x + rng.standard_normal(x.shape) * (0.05 * stats)
    if strength == "strong":
        out = x + rng.standard_normal(x.shape) * (0.25 * stats)
        out[rng.random(x.shape) < 0.1] = 0.0
        return out
    raise ValueError(f"unknown augmentation strength {strength!r}")


def feature_stats(features: np.ndarray) -> np.ndarray:
    std = features.std(axis=0)
    return np.where(std > 0, std, 1.0)


# ---------------------------------------------------------------- serialization

PathLike = Union[str, Path]


def save_csv(ds: LabeledDataset, path: PathLike) -> None:
    header = [f"f{j}" for j in range(ds.dim)] + ["true_label", "given_label", "is_ood"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(ds)):
            w.writerow(
                [repr(float(v)) for v in ds.features[i]]
                + [int(ds.true_labels[i]), int(ds.given_labels[i]), int(ds.is_ood[i])]
            )


def load_csv(path: PathLike, class_count: Optional[int] = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = len(header) - 3
    if header[d:] != ["true_label", "given_label", "is_ood"] or header[:d] != [f"f{j}" for j in range(d)]:
        raise ValueError(f"{path}: unexpected dataset CSV header")
    arr = np.array(body, dtype=object).reshape(len(body), len(header))
    features = arr[:, :d].astype(np.float64)
    true_labels = arr[:, d].astype(np.int64)
    given = arr[:, d + 1].astype(np.int64)
    is_ood = arr[:, d + 2].astype(np.int64).astype(bool)
    if class_count is None:
        class_count = int(max(given.max(initial=-1), true_labels[~is_ood].max(initial=-1))) + 1
    return LabeledDataset(features, true_labels, given, is_ood, class_count)


def save_binary(ds: LabeledDataset, path: PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(_BIN_MAGIC, _BIN_VERSION, len(ds), ds.dim, ds.class_count))
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(ds.true_labels.astype("<i8").tobytes())
        fh.write(ds.given_labels.astype("<i8").tobytes())
        fh.write(ds.is_ood.astype("u1").tobytes())


def load_binary(path: PathLike) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _BIN_HEADER.size:
        raise ValueError(f"{path}: truncated dataset file")
    magic, version, n, d, C = _BIN_HEADER.unpack_from(raw)
    if magic != _BIN_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != _BIN_VERSION:
        raise ValueError(f"{path}: unsupported dataset format version {version}")
    expected = _BIN_HEADER.size + n * d * 8 + 2 * n * 8 + n
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match header ({expected})")
    off = _BIN_HEADER.size
    features = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d)
    off += n * d * 8
    true_labels = np.frombuffer(raw, "<i8", n, off)
    off += n * 8
    given = np.frombuffer(raw, "<i8", n, off)
    off += n * 8
    is_ood = np.frombuffer(raw, "u1", n, off).astype(bool)
    return LabeledDataset(features.copy(), true_labels.copy(), given.copy(), is_ood, C)
