"""Config-driven experiment steps shared by the command line and the demos."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import nn
from ..binary import SteVariant
from ..factorized import LayerMode
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import DataError, DatasetSource, load_dataset
from .evaluation import omniscient_eval, robustness_sweep
from .landscape import loss_landscape
from .training import STREAM_INIT, STREAM_LANDSCAPE, AdversarialTraining, fit, rng_stream

PHASE_PRETRAIN = 0
PHASE_TRAIN = 1


def dataset_source(cfg: ExperimentConfig) -> DatasetSource:
    if cfg.dataset == "synthetic-images":
        size = cfg.image_size
    elif cfg.dataset == "synthetic-1d":
        size = cfg.signal_length
    elif cfg.dataset == "idx":
        size = 0
    else:
        raise DataError(f"unknown dataset {cfg.dataset!r}")
    return DatasetSource(
        kind=cfg.dataset,
        num_classes=cfg.num_classes,
        size=size,
        channels=cfg.channels,
        n_examples=cfg.n_examples,
        seed=cfg.data_seed,
        noise=cfg.noise,
        texture=cfg.texture,
        images_path=cfg.idx_images,
        labels_path=cfg.idx_labels,
    )


def load_splits(cfg: ExperimentConfig) -> tuple:
    return load_dataset(dataset_source(cfg))


def model_spec(cfg: ExperimentConfig, input_shape=None) -> nn.ModelSpec:
    if cfg.model == "small-cnn-2d":
        shape = input_shape or (cfg.channels, cfg.image_size, cfg.image_size)
        return nn.small_cnn_2d(
            shape, cfg.num_classes, cfg.widths, cfg.hidden, cfg.kernel, cfg.binary_first_last
        )
    if cfg.model == "soundnet5-1d":
        return nn.soundnet5_1d(cfg.signal_length, cfg.kernel)
    if cfg.model == "custom-from-config":
        if not cfg.spec_file:
            raise ConfigError("custom-from-config needs spec_file")
        try:
            spec = json.loads(Path(cfg.spec_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model spec {cfg.spec_file}: {exc}") from exc
        return nn.build_model("custom-from-config", spec=spec)
    raise ConfigError(f"unknown model {cfg.model!r}")


def parse_ranks(text: str):
    if text in ("half", "full"):
        return text
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"ranks must be 'half', 'full' or a fraction, got {text!r}") from None


def optimizer(cfg: ExperimentConfig, epochs: int, lr: float | None = None) -> nn.OptimizerConfig:
    """Momentum SGD whose drops sit at the configured fractions of ``epochs``."""
    drops = tuple(int(round(f * epochs)) for f in cfg.lr_drops)
    return nn.OptimizerConfig(cfg.lr if lr is None else lr, cfg.momentum, cfg.weight_decay, drops, cfg.lr_drop_factor)


def initial_model(cfg: ExperimentConfig, spec: nn.ModelSpec) -> nn.Model:
    seed = int(rng_stream(cfg.seed, STREAM_INIT).integers(2**31))
    return nn.init_model(spec, seed, parse_ranks(cfg.ranks), 1.0, cfg.rescale, cfg.ste)


def train(cfg: ExperimentConfig, splits=None, log=None) -> tuple:
    """Train the configured model; returns ``(model, metrics)``.

    Starting from ``init_checkpoint`` fine-tunes that model at ``theta``.
    Otherwise a model with ``theta < 1`` first trains ``pretrain_epochs`` at
    ``theta = 1`` and then fine-tunes with dropout, since starting dropout from
    a random initialization trains poorly. The fine-tuning phase uses
    ``finetune_lr`` when it is positive.
    """
    train_split, val_split, _ = splits or load_splits(cfg)
    spec = model_spec(cfg, train_split.x.shape[1:])
    adversarial = None
    if cfg.adv_train:
        adversarial = AdversarialTraining(cfg.adv_epsilons, cfg.epsilon_units, cfg.pixel_bounds)
    common = dict(seed=cfg.seed, batch_size=cfg.batch_size, flip=cfg.flip, adversarial=adversarial, val=val_split)
    metrics = []

    def record(phase):
        def _log(m):
            m = dict(m, phase=phase)
            metrics.append(m)
            if log is not None:
                log(m)
        return _log

    finetune = bool(cfg.init_checkpoint)
    if cfg.init_checkpoint:
        model, _ = load_checkpoint(cfg.init_checkpoint, spec)
    else:
        model = initial_model(cfg, spec)
        if cfg.theta < 1 and cfg.pretrain_epochs > 0:
            finetune = True
            fit(model, train_split, epochs=cfg.pretrain_epochs, optimizer=optimizer(cfg, cfg.pretrain_epochs),
                stream=PHASE_PRETRAIN, log=record("pretrain"), **common)
    model = model.copy(theta=cfg.theta, rescale=cfg.rescale)
    model.ste = SteVariant.parse(cfg.ste)
    for p in model.params.values():
        p.momentum[...] = 0.0
    lr = cfg.finetune_lr if finetune and cfg.finetune_lr > 0 else cfg.lr
    fit(model, train_split, epochs=cfg.epochs, optimizer=optimizer(cfg, cfg.epochs, lr), stream=PHASE_TRAIN,
        log=record("train"), **common)
    return model, metrics


def adversarial_train(cfg: ExperimentConfig, splits=None, log=None) -> tuple:
    return train(cfg.replace(adv_train=True), splits, log)


def test_split(cfg: ExperimentConfig, splits=None):
    _, _, test = splits or load_splits(cfg)
    return test.take(cfg.eval_examples)


def _sweep_kwargs(cfg: ExperimentConfig) -> dict:
    return dict(
        n_runs=cfg.n_runs,
        seed=cfg.seed,
        units=cfg.epsilon_units,
        pixel_bounds=cfg.pixel_bounds,
        bpda_k=cfg.bpda_k,
        iterations=cfg.bpda_iterations or None,
        batch_size=cfg.eval_batch,
    )


def sweep(cfg: ExperimentConfig, model: nn.Model, splits=None):
    test = test_split(cfg, splits)
    return robustness_sweep(model, test.x, test.y, cfg.attacks, cfg.epsilons, **_sweep_kwargs(cfg))


def omniscient(cfg: ExperimentConfig, model: nn.Model, splits=None):
    test = test_split(cfg, splits)
    return omniscient_eval(
        model, test.x, test.y, cfg.attacks, cfg.epsilons, theta_defense=cfg.theta_defense, **_sweep_kwargs(cfg)
    )


def landscape(cfg: ExperimentConfig, model: nn.Model, splits=None):
    test = test_split(cfg, splits)
    i = cfg.landscape_index
    if not 0 <= i < len(test):
        raise ConfigError(f"landscape_index {i} outside the test split")
    mode = LayerMode(cfg.landscape_mode)
    return loss_landscape(
        model,
        test.x[i],
        int(test.y[i]),
        rng_stream(cfg.seed, STREAM_LANDSCAPE, 0),
        n=cfg.landscape_n,
        extent=cfg.landscape_range,
        mode=mode,
        mask_rng=rng_stream(cfg.seed, STREAM_LANDSCAPE, 1),
        batch_size=cfg.eval_batch,
    )


def metrics_summary(model, cfg, splits=None) -> dict:
    test = test_split(cfg, splits)
    pred = nn.predict(model, test.x, LayerMode.DETERMINISTIC)
    return {"deterministic_test_accuracy": 100.0 * float(np.mean(pred == test.y))}
