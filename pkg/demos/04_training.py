"""Train a small CNN with the tape-based autodiff.

A deterministic network is trained first, then fine-tuned with tensor
dropout at theta = 0.8. The randomized network is evaluated with fresh masks
on every batch.
"""

import numpy as np

from deftensor.harness.config import ExperimentConfig
from deftensor.harness import experiments
from deftensor.harness.training import accuracy, rng_stream

cfg = ExperimentConfig(ranks="full", widths=(16, 32, 32), n_examples=1600, pretrain_epochs=10, epochs=20)
splits = experiments.load_splits(cfg)
test = splits[2]

base, metrics = experiments.train(cfg, splits, log=lambda m: print(m["phase"], m["epoch"], round(m["loss"], 4)))
print("deterministic test accuracy:", accuracy(base, test.x, test.y))

randomized, _ = experiments.train(cfg.replace(theta=0.8), splits)
# one mask is shared by a whole batch, so an unlucky draw costs the entire batch
accs = [accuracy(randomized, test.x, test.y, rng=rng_stream(0, 4, r)) for r in range(5)]
print("theta=0.8 test accuracy over 5 mask draws:", np.round(accs, 2))
