"""Flat, typed run configuration loaded from TOML, with named presets."""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .dataset import NOISE_KINDS, LabeledDataset, NoiseSpec, generate_blobs, inject_noise
from .errors import ConfigError
from .trainer import AblationSpec, TrainConfig

OUTPUT_ROOT_ENV = "SEDLNL_OUTPUT_ROOT"

PRESETS: Dict[str, Dict[str, Any]] = {
    "sym20": {"noise_kind": "symmetric", "noise_rate": 0.2},
    "sym40": {"noise_kind": "symmetric", "noise_rate": 0.4},
    "sym80": {"noise_kind": "symmetric", "noise_rate": 0.8},
    "asym40": {"noise_kind": "asymmetric", "noise_rate": 0.4},
    "openset-asym40": {
        "noise_kind": "openset",
        "noise_rate": 0.4,
        "inner_noise_kind": "asymmetric",
        "ood_class_count": 1,
    },
    "heterogeneous": {
        "noise_kind": "symmetric",
        "noise_rate": 0.4,
        "spread": [0.8, 1.2, 1.8, 2.6],
    },
}

_BASE: Dict[str, Any] = {
    "name": "",
    "preset": "",
    "seed": 0,
    "class_count": 4,
    "per_class": 1000,
    "dim": 2,
    "spread": 1.5,
    "radius": 4.0,
    "test_per_class": 1000,
    "noise_kind": "symmetric",
    "noise_rate": 0.4,
    "ood_class_count": 0,
    "inner_noise_kind": "",
    "method": "sed",
    "save_every": 0,
    "output_root": "runs",
}

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed", "method", "ablation"}
_ABLATION_KEYS = set(AblationSpec.flag_names())


@dataclass(frozen=True)
class DataSpec:
    class_count: int
    per_class: int
    dim: int
    spread: Tuple[float, ...]
    radius: float
    test_per_class: int
    noise: NoiseSpec

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["spread"] = list(self.spread)
        return d


@dataclass(frozen=True)
class RunConfig:
    name: str
    preset: str
    seed: int
    data: DataSpec
    train: TrainConfig
    save_every: int = 0
    output_root: str = "runs"
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    def echo(self) -> Dict[str, Any]:
        """Every resolved key, flat, in a JSON-friendly form."""
        return dict(sorted(self.raw.items()))

    def resolved_output_root(self) -> Path:
        return Path(os.environ.get(OUTPUT_ROOT_ENV) or self.output_root)


def _expect(key: str, value, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(key, f"expected int, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(key, f"expected {kind.__name__}, got {type(value).__name__} ({value!r})")
    return value


def resolve(values: Dict[str, Any]) -> RunConfig:
    """Apply preset and defaults to a flat mapping and validate every field."""
    values = dict(values)
    preset = values.get("preset", "")
    merged = dict(_BASE)
    for k, v in TrainConfig().__dict__.items():
        if k in _TRAIN_KEYS:
            merged[k] = list(v) if isinstance(v, tuple) else v
    merged.update({k: False for k in _ABLATION_KEYS})
    if preset:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    unknown = set(values) - set(merged)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown configuration key")
    merged.update(values)

    defaults = {**TrainConfig().__dict__, **_BASE}
    typed: Dict[str, Any] = {}
    for key, value in merged.items():
        if key == "spread":
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = [float(value)] * int(merged["class_count"])
            if not isinstance(value, list):
                raise ConfigError(key, "expected a number or a list of numbers")
            value = [_expect(key, v, float) for v in value]
        elif key == "hidden":
            if not isinstance(value, list):
                raise ConfigError(key, "expected a list of layer widths")
            value = [_expect(key, v, int) for v in value]
        elif key in _ABLATION_KEYS:
            value = _expect(key, value, bool)
        else:
            value = _expect(key, value, type(defaults[key]))
        typed[key] = value

    if typed["noise_kind"] not in NOISE_KINDS:
        raise ConfigError("noise_kind", f"must be one of {NOISE_KINDS}")
    if typed["test_per_class"] < 1:
        raise ConfigError("test_per_class", "must be at least 1")
    if typed["save_every"] < 0:
        raise ConfigError("save_every", "must be nonnegative")
    if len(typed["spread"]) != typed["class_count"]:
        raise ConfigError("spread", f"need {typed['class_count']} values, got {len(typed['spread'])}")
    if typed["noise_kind"] == "openset":
        inner_kind = typed["inner_noise_kind"] or "symmetric"
        noise = NoiseSpec(
            "openset", typed["noise_rate"], typed["ood_class_count"], NoiseSpec(inner_kind, typed["noise_rate"])
        )
    else:
        if typed["inner_noise_kind"]:
            raise ConfigError("inner_noise_kind", "only valid for openset noise")
        noise = NoiseSpec(typed["noise_kind"], typed["noise_rate"], typed["ood_class_count"])

    data = DataSpec(
        typed["class_count"],
        typed["per_class"],
        typed["dim"],
        tuple(typed["spread"]),
        typed["radius"],
        typed["test_per_class"],
        noise,
    )
    for key in ("class_count", "per_class", "dim"):
        if typed[key] < (2 if key == "class_count" else 1):
            raise ConfigError(key, "too small")
    if min(data.spread) <= 0:
        raise ConfigError("spread", "spreads must be positive")
    if data.radius <= 0:
        raise ConfigError("radius", "must be positive")

    train = TrainConfig(
        **{k: (tuple(typed[k]) if k == "hidden" else typed[k]) for k in _TRAIN_KEYS},
        seed=typed["seed"],
        method=typed["method"],
        ablation=AblationSpec(**{k: typed[k] for k in _ABLATION_KEYS}),
    )
    name = typed["name"] or preset or "run"
    return RunConfig(name, preset, typed["seed"], data, train, typed["save_every"], typed["output_root"], typed)


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"{path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"{path}: {exc}") from None
    for key, value in values.items():
        if isinstance(value, dict):
            raise ConfigError(key, "nested tables are not supported; use flat keys")
    values.update(overrides)
    return resolve(values)


def preset_config(preset: str, **overrides) -> RunConfig:
    return resolve({"preset": preset, **overrides})


def _seeds(seed: int):
    data_ss, noise_ss, test_ss = np.random.SeedSequence([seed, 0x5ED]).spawn(3)
    return (int(s.generate_state(1)[0]) for s in (data_ss, noise_ss, test_ss))


def build_datasets(cfg: RunConfig) -> Tuple[LabeledDataset, LabeledDataset]:
    """Noisy training set and clean in-distribution test set drawn from the same blobs."""
    d = cfg.data
    data_seed, noise_seed, test_seed = _seeds(cfg.seed)
    clean = generate_blobs(d.class_count, d.per_class, d.dim, d.spread, data_seed, d.radius)
    train = inject_noise(clean, d.noise, noise_seed)
    test = generate_blobs(d.class_count, d.test_per_class, d.dim, d.spread, test_seed, d.radius)
    return train, test
