"""Robustness sweep, omniscient attacker and loss landscape.

The sweep repeats every attack over several runs with independent masks and
reports mean and standard deviation. The omniscient attacker crafts
examples on the deterministic weights and sends them to the randomized model.
"""

from deftensor.harness.config import ExperimentConfig
from deftensor.harness import experiments

cfg = ExperimentConfig(ranks="full", widths=(16, 32, 32), n_examples=1600, pretrain_epochs=10, epochs=20,
                       theta=0.8, n_runs=3, epsilons=(2.0, 8.0), landscape_n=11)
splits = experiments.load_splits(cfg)
model, _ = experiments.train(cfg, splits)

print(experiments.sweep(cfg, model, splits).render())
print()
print(experiments.omniscient(cfg, model, splits).render())

grid = experiments.landscape(cfg, model, splits)
print()
print("landscape grid", grid.loss.shape, "center loss", round(float(grid.loss[5, 5]), 4),
      "max loss", round(float(grid.loss.max()), 4))
