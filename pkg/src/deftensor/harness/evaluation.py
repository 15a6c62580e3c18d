"""Robustness sweeps over attacks and perturbation budgets.

Randomness is split by role. Per run ``r`` the defense draws its masks from
streams seeded by ``(seed, r)``, while the attacker's random start only
depends on ``(seed, attack, epsilon)``. The mask stream used to score a run
is recreated for every row, so the clean row and an ``epsilon = 0`` row see
the same networks and agree exactly. A deterministic model therefore scores
the same on every run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..attacks import make_config, run_attack
from ..factorized import LayerMode
from .training import STREAM_ATTACK, STREAM_EVAL, accuracy, rng_stream

CSV_HEADER = ("attack", "epsilon", "mean", "std", "n_runs", "runs")


@dataclass(frozen=True)
class Row:
    attack: str
    epsilon: float
    runs: tuple

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(float(r) for r in self.runs))
        if not self.runs:
            raise ValueError("a row needs at least one run")
        if any(not 0.0 <= r <= 100.0 for r in self.runs):
            raise ValueError("accuracies must lie in [0, 100]")

    @property
    def mean(self) -> float:
        return float(np.mean(self.runs))

    @property
    def std(self) -> float:
        return float(np.std(self.runs))


@dataclass
class RobustnessTable:
    """Accuracy (percent) per ``(attack, epsilon)`` with every run kept."""

    rows: list = field(default_factory=list)

    def add(self, attack: str, epsilon: float, runs) -> Row:
        row = Row(attack, float(epsilon), tuple(runs))
        self.rows.append(row)
        return row

    def get(self, attack: str, epsilon: float) -> Row:
        for row in self.rows:
            if row.attack == attack and row.epsilon == float(epsilon):
                return row
        raise KeyError((attack, epsilon))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(
                [row.attack, repr(row.epsilon), repr(row.mean), repr(row.std), len(row.runs),
                 ";".join(repr(r) for r in row.runs)]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RobustnessTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError("not a robustness table: bad header")
        table = cls()
        for line in reader:
            if not line:
                continue
            attack, eps, _, _, n_runs, runs = line
            values = [float(r) for r in runs.split(";")]
            if len(values) != int(n_runs):
                raise ValueError(f"row {attack} {eps}: run count mismatch")
            table.add(attack, float(eps), values)
        return table

    def render(self) -> str:
        """Aligned plain-text table with mean and std to two decimals."""
        head = ["attack", "epsilon", "mean", "std", "runs"]
        body = [
            [row.attack, f"{row.epsilon:g}", f"{row.mean:.2f}", f"{row.std:.2f}", str(len(row.runs))]
            for row in self.rows
        ]
        widths = [max(len(r[c]) for r in [head] + body) for c in range(len(head))]
        lines = []
        for r in [head] + body:
            cells = [r[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines) + "\n"


def _batched_attack(attack, model, x, y, cfg, attack_rng, model_rng, mode, theta, batch):
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    for start in range(0, len(y), batch):
        sl = slice(start, start + batch)
        res = run_attack(attack, model, x[sl], y[sl], cfg, attack_rng, mode=mode, theta=theta, model_rng=model_rng)
        out[sl] = res.x_adv
    return out


def robustness_sweep(
    model: nn.Model,
    x,
    y,
    attacks=("fgsm", "pgd"),
    epsilons=(2.0, 8.0, 16.0),
    *,
    n_runs: int = 10,
    seed: int = 0,
    units: str = "255",
    pixel_bounds=(0.0, 1.0),
    bpda_k: int = 10,
    iterations: int | None = None,
    batch_size: int = 256,
    attack_mode: LayerMode = LayerMode.RANDOMIZED,
    attack_theta: float | None = None,
    eval_theta: float | None = None,
) -> RobustnessTable:
    """Clean and white-box robust accuracy over ``n_runs`` defense seeds.

    ``attack_mode``/``attack_theta`` set the network the attacker queries;
    scoring always uses randomized inference at ``eval_theta`` (default: the
    model's own keep probability).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    runs = {("clean", 0.0): []}
    for a in attacks:
        for eps in epsilons:
            runs[(a, float(eps))] = []
    for r in range(n_runs):
        def eval_rng():
            return rng_stream(seed, STREAM_EVAL, r, 0)

        runs[("clean", 0.0)].append(
            accuracy(model, x, y, LayerMode.RANDOMIZED, eval_rng(), theta=eval_theta, batch_size=batch_size)
        )
        for ai, a in enumerate(attacks):
            for ei, eps in enumerate(epsilons):
                cfg = make_config(a, eps, units=units, pixel_bounds=pixel_bounds, eot_samples=bpda_k,
                                  iterations=iterations)
                attack_rng = rng_stream(seed, STREAM_ATTACK, ai, ei)
                model_rng = rng_stream(seed, STREAM_EVAL, r, 1 + ai, ei)
                x_adv = _batched_attack(a, model, x, y, cfg, attack_rng, model_rng, attack_mode, attack_theta,
                                        batch_size)
                runs[(a, float(eps))].append(
                    accuracy(model, x_adv, y, LayerMode.RANDOMIZED, eval_rng(), theta=eval_theta,
                             batch_size=batch_size)
                )
    table = RobustnessTable()
    for (a, eps), values in runs.items():
        table.add(a, eps, values)
    return table


def omniscient_eval(model: nn.Model, x, y, attacks=("fgsm", "pgd"), epsilons=(8.0, 16.0), *,
                    theta_defense: float = 0.9, **kwargs) -> RobustnessTable:
    """Attack the deterministic network, then defend with randomized inference.

    The attacker knows every weight and crafts examples on the ``theta = 1``
    network; the defender scores them with fresh masks at ``theta_defense``.
    """
    if not any(k in nn.TUCKER_KINDS + ("matrix",) for k in model.kinds()):
        raise ValueError("omniscient evaluation needs a model with factorized layers")
    return robustness_sweep(
        model, x, y, attacks, epsilons,
        attack_mode=LayerMode.DETERMINISTIC, eval_theta=theta_defense, **kwargs,
    )
