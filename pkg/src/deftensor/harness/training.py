"""Mini-batch SGD training, optionally on PGD adversarial examples.

Random streams are derived from one master seed: stream ``(seed, key, *extra)``
is ``default_rng(SeedSequence([seed, key, *extra]))`` with one ``key`` per
purpose (see the ``STREAM_*`` constants). Streams never share state, so for
instance adversarial sampling cannot perturb the shuffling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..attacks import make_config, pgd
from ..factorized import LayerMode

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_MASKS = 2
STREAM_ADV = 3
STREAM_EVAL = 4
STREAM_ATTACK = 5
STREAM_LANDSCAPE = 6
STREAM_FLIP = 7


class NumericError(ArithmeticError):
    """Raised when a computation produces an unusable value (NaN loss, zero gradient)."""


def rng_stream(seed: int, key: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(key), *map(int, extra)]))


def accuracy(model, x, y, mode=LayerMode.RANDOMIZED, rng=None, *, theta=None, batch_size=256) -> float:
    """Percentage of correct predictions; one mask draw per batch."""
    correct = 0
    for start in range(0, len(y), batch_size):
        pred = nn.predict(model, x[start : start + batch_size], mode, rng, theta=theta)
        correct += int(np.sum(pred == y[start : start + batch_size]))
    return 100.0 * correct / max(len(y), 1)


def mean_loss(model, x, y, mode=LayerMode.RANDOMIZED, rng=None, *, theta=None, batch_size=256) -> float:
    total = 0.0
    for start in range(0, len(y), batch_size):
        logits, _ = nn.forward(model, x[start : start + batch_size], mode, rng, theta=theta)
        total += float(ad.cross_entropy(logits, y[start : start + batch_size], reduction="sum").value)
    return total / max(len(y), 1)


@dataclass(frozen=True)
class AdversarialTraining:
    """Per-batch PGD: epsilon drawn uniformly from ``epsilons`` (0..255 units)."""

    epsilons: tuple = (2.0, 4.0, 8.0, 16.0)
    units: str = "255"
    pixel_bounds: tuple = (0.0, 1.0)

    def sample(self, rng) -> tuple:
        """Draw ``(epsilon, attack config or None)`` for one batch."""
        eps = float(self.epsilons[rng.integers(len(self.epsilons))])
        if eps == 0:
            return eps, None
        return eps, make_config("pgd", eps, units=self.units, pixel_bounds=self.pixel_bounds)


def fit(
    model: nn.Model,
    train,
    *,
    epochs: int,
    optimizer: nn.OptimizerConfig,
    seed: int = 0,
    batch_size: int = 32,
    flip: bool = False,
    adversarial: AdversarialTraining | None = None,
    val=None,
    start_epoch: int = 0,
    stream: int = 0,
    log=None,
) -> list:
    """Train ``model`` in place; returns one metrics dict per epoch.

    Masks are sampled fresh for every batch, exactly as at test time.
    ``stream`` separates the random streams of successive training phases
    that share a seed. ``log`` (if given) is called with each epoch's metrics.
    """
    shuffle_rng = rng_stream(seed, STREAM_SHUFFLE, stream, start_epoch)
    mask_rng = rng_stream(seed, STREAM_MASKS, stream, start_epoch)
    flip_rng = rng_stream(seed, STREAM_FLIP, stream, start_epoch)
    adv_rng = rng_stream(seed, STREAM_ADV, stream, start_epoch)
    metrics = []
    n = len(train.y)
    for epoch in range(start_epoch, start_epoch + epochs):
        order = shuffle_rng.permutation(n)
        total_loss, correct, eps_drawn = 0.0, 0, []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = train.x[idx], train.y[idx]
            if flip:
                mirror = flip_rng.random(len(idx)) < 0.5
                xb = np.where(mirror[:, None, None, None], xb[..., ::-1], xb)
            if adversarial is not None:
                eps, cfg = adversarial.sample(adv_rng)
                eps_drawn.append(eps)
                if cfg is not None:
                    xb = pgd(model, xb, yb, cfg, adv_rng).x_adv
            logits, tape = nn.forward(model, xb, LayerMode.RANDOMIZED, mask_rng, param_grad=True)
            loss = ad.cross_entropy(logits, yb)
            if not np.isfinite(loss.value):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            grads = nn.backward(tape, loss)
            model.zero_grad()
            nn.accumulate_grads(model, grads)
            nn.sgd_step(model.parameters(), optimizer, epoch)
            total_loss += float(loss.value) * len(idx)
            correct += int(np.sum(np.argmax(logits.value, axis=1) == yb))
        record = {
            "epoch": epoch,
            "theta": model.theta,
            "lr": optimizer.lr_at(epoch),
            "loss": total_loss / n,
            "train_accuracy": 100.0 * correct / n,
        }
        if eps_drawn:
            record["adv_epsilons"] = eps_drawn
        if val is not None and len(val.y):
            record["val_accuracy"] = accuracy(
                model, val.x, val.y, LayerMode.RANDOMIZED, rng_stream(seed, STREAM_EVAL, stream, epoch)
            )
        metrics.append(record)
        if log is not None:
            log(record)
    return metrics
