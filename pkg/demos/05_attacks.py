"""White-box attacks against a deterministic and a randomized network.

FGSM takes one signed-gradient step, BIM and PGD iterate and clip back to
the epsilon ball, and BPDA averages gradients over several mask draws.
"""

import numpy as np

from deftensor import make_config
from deftensor.attacks import iteration_schedule, run_attack
from deftensor.harness.config import ExperimentConfig
from deftensor.harness import experiments
from deftensor.harness.training import accuracy, rng_stream

for eps in (2, 8, 16):
    print(f"eps={eps}/255: step size and iterations", iteration_schedule(eps))

cfg = ExperimentConfig(ranks="full", widths=(16, 32, 32), n_examples=1600, pretrain_epochs=10, epochs=20)
splits = experiments.load_splits(cfg)
x, y = splits[2].x, splits[2].y
models = {"theta=1": experiments.train(cfg, splits)[0], "theta=0.8": experiments.train(cfg.replace(theta=0.8), splits)[0]}

for name, model in models.items():
    print(name, "clean", round(accuracy(model, x, y, rng=rng_stream(0, 4, 0)), 2))
    for attack in ("fgsm", "bim", "pgd", "bpda"):
        res = run_attack(attack, model, x, y, make_config(attack, 8, eot_samples=4), rng_stream(0, 5, 0))
        linf = np.abs(res.x_adv - x).max() * 255
        acc = accuracy(model, res.x_adv, y, rng=rng_stream(0, 4, 1))
        print(f"  {attack:>5} eps=8: accuracy {acc:6.2f}, max perturbation {linf:.2f}/255")
