"""Experiment configuration as a flat ``key = value`` text file."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

OUTPUT_ROOT_ENV = "DEFTENSOR_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    model: str = "small-cnn-2d"
    kernel: str = "tucker"
    ranks: str = "half"
    theta: float = 1.0
    rescale: bool = False
    ste: str = "id"
    binary_first_last: bool = False
    widths: tuple = (16, 32, 32)
    hidden: int = 32
    spec_file: str = ""
    # data
    dataset: str = "synthetic-images"
    num_classes: int = 4
    image_size: int = 8
    signal_length: int = 16000
    channels: int = 3
    n_examples: int = 2000
    data_seed: int = 0
    noise: float = 0.4
    texture: float = 0.08
    idx_images: str = ""
    idx_labels: str = ""
    pixel_low: float = 0.0
    pixel_high: float = 1.0
    # optimization
    lr: float = 0.01
    finetune_lr: float = 0.0  # dropout fine-tuning phase; 0 means reuse lr
    momentum: float = 0.9
    weight_decay: float = 1e-6
    lr_drops: tuple = (0.75,)
    lr_drop_factor: float = 0.1
    epochs: int = 20
    pretrain_epochs: int = 20
    batch_size: int = 32
    flip: bool = False
    adv_train: bool = False
    adv_epsilons: tuple = (2.0, 4.0, 8.0, 16.0)
    init_checkpoint: str = ""
    # evaluation
    attacks: tuple = ("fgsm", "pgd")
    epsilons: tuple = (2.0, 8.0, 16.0)
    epsilon_units: str = "255"
    n_runs: int = 10
    eval_examples: int = 0
    eval_batch: int = 256
    bpda_k: int = 10
    bpda_iterations: int = 0
    theta_defense: float = 0.9
    landscape_n: int = 41
    landscape_index: int = 0
    landscape_range: float = 0.5
    landscape_mode: str = "deterministic"
    # run
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 <= self.theta_defense <= 1.0:
            raise ConfigError("theta_defense must lie in [0, 1]")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")

    @property
    def pixel_bounds(self) -> tuple:
        return (self.pixel_low, self.pixel_high)

    def output_dir(self) -> Path:
        out = Path(self.out)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(_scalar_text(v) for v in value)
            else:
                text = _scalar_text(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls().with_overrides({k: v for k, v in d.items()})

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls().with_overrides(values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def with_overrides(self, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, value in values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(getattr(self, key), value, key)
        try:
            return dataclasses.replace(self, **changes)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# element types of the tuple fields
_TUPLE_ELEMENTS = {"lr_drops": float, "widths": int, "adv_epsilons": float, "epsilons": float, "attacks": str}


def _scalar_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_bool(text: str, key: str) -> bool:
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _coerce(default, value, key):
    if not isinstance(value, str):
        if isinstance(default, tuple):
            return tuple(value)
        return value
    try:
        if isinstance(default, bool):
            return _parse_bool(value, key)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            elem = _TUPLE_ELEMENTS.get(key, str)
            return tuple(elem(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc
    return value
