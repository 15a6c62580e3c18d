"""L-infinity white-box attacks: FGSM, BIM, PGD and EOT/BPDA-PGD.

All attacks work on a batch ``x`` of shape ``(N,) + input_shape`` with
integer labels ``y``. Examples do not interact: each coordinate step only
depends on that example's own input gradient. Against randomized models every
gradient query is one fresh randomized forward/backward pass. The random
start is drawn from ``rng``; mask draws come from ``model_rng`` (default:
the same generator), so callers can keep the attacker's own randomness fixed
while varying the defense seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .factorized import LayerMode

__all__ = [
    "AttackConfig",
    "AttackResult",
    "iteration_schedule",
    "make_config",
    "fgsm",
    "bim",
    "pgd",
    "eot_gradient",
    "bpda_pgd",
    "run_attack",
    "transfer_attack",
    "attack_records",
    "ATTACKS",
]


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float = 0.0
    iterations: int = 1
    random_start: bool = False
    pixel_bounds: tuple = (0.0, 1.0)
    eot_samples: int = 1

    def __post_init__(self):
        lo, hi = self.pixel_bounds
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if lo >= hi:
            raise ValueError("pixel bounds must satisfy low < high")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be at least 1")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    delta: np.ndarray
    success: np.ndarray
    queries: int

    @property
    def linf(self) -> np.ndarray:
        return np.abs(self.delta).reshape(len(self.delta), -1).max(axis=1)


def iteration_schedule(epsilon: float) -> tuple:
    """Step size and iteration count for BIM/PGD with ``epsilon`` in 0..255 units.

    Step size 1, ``floor(min(eps + 4, 1.25 * eps))`` iterations.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 1.0, int(math.floor(min(epsilon + 4.0, 1.25 * epsilon)))


def make_config(
    attack: str,
    epsilon: float,
    *,
    units: str = "255",
    pixel_bounds=(0.0, 1.0),
    eot_samples: int = 10,
    iterations: int | None = None,
) -> AttackConfig:
    """Attack configuration with the standard BIM/PGD schedule.

    ``units="255"`` reads ``epsilon`` on the 0..255 image scale and converts
    it to input units with ``(high - low) / 255``; ``units="raw"`` takes it
    in input units already (audio), and the schedule is evaluated on the
    equivalent 0..255 value.
    """
    lo, hi = pixel_bounds
    unit = (hi - lo) / 255.0
    if units == "255":
        eps_255, eps_in = float(epsilon), float(epsilon) * unit
    elif units == "raw":
        eps_255, eps_in = float(epsilon) / unit, float(epsilon)
    else:
        raise ValueError(f"unknown epsilon units {units!r}")
    attack = attack.lower()
    if attack == "fgsm" or eps_in == 0:
        return AttackConfig(eps_in, eps_in, 1, False, tuple(pixel_bounds))
    step, n = iteration_schedule(eps_255)
    if iterations is not None:
        n = iterations
    return AttackConfig(
        eps_in,
        step * unit,
        max(n, 1),
        random_start=attack in ("pgd", "bpda"),
        pixel_bounds=tuple(pixel_bounds),
        eot_samples=eot_samples if attack == "bpda" else 1,
    )


def _project(x_adv, x, cfg: AttackConfig):
    lo, hi = cfg.pixel_bounds
    return np.clip(np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon), lo, hi)


def _gradient(model, x, y, mode, rng, theta):
    g, _ = nn.input_gradient(model, x, y, mode, rng, theta=theta)
    return g


def _success(model, x_adv, y, mode, rng, theta):
    return nn.predict(model, x_adv, mode, rng, theta=theta) != np.asarray(y)


def eot_gradient(model, x, y, k: int = 10, rng=None, *, mode=LayerMode.RANDOMIZED, theta=None):
    """Sum of input gradients over ``k`` independently randomized passes."""
    if k < 1:
        raise ValueError("k must be at least 1")
    total = np.zeros_like(np.asarray(x, dtype=np.float64))
    for _ in range(k):
        total += _gradient(model, x, y, mode, rng, theta)
    return total


def _iterate(model, x, y, cfg, rng, mode, theta, callback, k, model_rng):
    model_rng = rng if model_rng is None else model_rng
    x = np.asarray(x, dtype=np.float64)
    x_adv = x.copy()
    queries = 0
    if cfg.random_start and cfg.epsilon > 0:
        x_adv = _project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg)
    if callback is not None:
        callback(x_adv)
    for _ in range(cfg.iterations):
        g = eot_gradient(model, x_adv, y, k, model_rng, mode=mode, theta=theta)
        queries += k
        x_adv = _project(x_adv + cfg.step_size * np.sign(g), x, cfg)
        if callback is not None:
            callback(x_adv)
    success = _success(model, x_adv, y, mode, model_rng, theta)
    return AttackResult(x_adv, x_adv - x, success, queries + 1)


def fgsm(
    model, x, y, cfg: AttackConfig, rng=None, *, mode=LayerMode.RANDOMIZED, theta=None, callback=None, model_rng=None
):
    """One signed-gradient step of size epsilon, clipped to the pixel bounds."""
    x = np.asarray(x, dtype=np.float64)
    model_rng = rng if model_rng is None else model_rng
    if cfg.epsilon == 0:
        x_adv = x.copy()
    else:
        g = _gradient(model, x, y, mode, model_rng, theta)
        lo, hi = cfg.pixel_bounds
        x_adv = np.clip(x + cfg.epsilon * np.sign(g), lo, hi)
    if callback is not None:
        callback(x_adv)
    success = _success(model, x_adv, y, mode, model_rng, theta)
    return AttackResult(x_adv, x_adv - x, success, 2)


def bim(
    model, x, y, cfg: AttackConfig, rng=None, *, mode=LayerMode.RANDOMIZED, theta=None, callback=None, model_rng=None
):
    """Iterated FGSM with per-step clipping; never uses a random start."""
    return _iterate(model, x, y, replace(cfg, random_start=False), rng, mode, theta, callback, 1, model_rng)


def pgd(
    model, x, y, cfg: AttackConfig, rng=None, *, mode=LayerMode.RANDOMIZED, theta=None, callback=None, model_rng=None
):
    """BIM with an optional uniform random start inside the epsilon ball."""
    if cfg.random_start and rng is None:
        raise ValueError("a random start needs an rng")
    return _iterate(model, x, y, cfg, rng, mode, theta, callback, 1, model_rng)


def bpda_pgd(
    model, x, y, cfg: AttackConfig, rng=None, *, mode=LayerMode.RANDOMIZED, theta=None, callback=None, model_rng=None
):
    """PGD stepping along the sign of the EOT gradient over ``cfg.eot_samples`` passes."""
    if rng is None:
        raise ValueError("bpda_pgd needs an rng")
    return _iterate(model, x, y, cfg, rng, mode, theta, callback, cfg.eot_samples, model_rng)


ATTACKS = {"fgsm": fgsm, "bim": bim, "pgd": pgd, "bpda": bpda_pgd}


def run_attack(name: str, model, x, y, cfg, rng=None, **kwargs) -> AttackResult:
    try:
        fn = ATTACKS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown attack {name!r}") from None
    return fn(model, x, y, cfg, rng, **kwargs)


def transfer_attack(
    source,
    target,
    attack: str,
    x,
    y,
    cfg: AttackConfig,
    attack_rng=None,
    eval_rng=None,
    *,
    source_mode=LayerMode.RANDOMIZED,
    target_mode=LayerMode.RANDOMIZED,
) -> float:
    """Accuracy (percent) of ``target`` on adversarial examples crafted on ``source``."""
    if source.spec.input_shape != target.spec.input_shape or (
        source.spec.num_classes != target.spec.num_classes
    ):
        raise ValueError("source and target models must share input and output shapes")
    result = run_attack(attack, source, x, y, cfg, attack_rng, mode=source_mode)
    pred = nn.predict(target, result.x_adv, target_mode, eval_rng)
    return 100.0 * float(np.mean(pred == np.asarray(y)))


def attack_records(result: AttackResult, indices, epsilon, attack: str) -> list:
    """Per-example JSON-serializable records of one attack run."""
    linf = result.linf
    per_example = result.queries
    return [
        {
            "index": int(i),
            "epsilon": float(epsilon),
            "attack": attack,
            "success": bool(s),
            "queries": int(per_example),
            "linf": float(d),
        }
        for i, s, d in zip(indices, result.success, linf)
    ]
