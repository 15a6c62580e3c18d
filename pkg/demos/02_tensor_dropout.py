"""Tensor dropout on a Tucker-factorized layer.

Each forward pass keeps every latent component with probability theta on
every mode. The effective kernel changes from draw to draw while the factors
stay fixed.
"""

import numpy as np

from deftensor import LayerMode, TuckerConvLayer, effective_weight, sample_masks, tucker_decompose
from deftensor.factorized import core_mask, randomized_weight, randomized_weight_reference

rng = np.random.default_rng(1)
w = rng.standard_normal((8, 4, 3, 3))
layer = TuckerConvLayer(tucker_decompose(w, (4, 2, 2, 2)), theta=0.8)
ranks = layer.factors.core.shape

masks = sample_masks(ranks, layer.theta, rng)
print("per-mode masks:", [m.astype(int).tolist() for m in masks.lambdas])
print("fraction of core kept:", core_mask(masks).mean())

# zeroing core entries gives the same kernel as masking the factors explicitly
diff = np.abs(randomized_weight(layer, masks) - randomized_weight_reference(layer, masks)).max()
print("elementwise vs explicit masking, max diff:", diff)

# the deterministic kernel is the plain reconstruction; random draws scatter around it
det = effective_weight(layer, LayerMode.DETERMINISTIC)
draws = np.stack([effective_weight(layer, LayerMode.RANDOMIZED, rng=rng) for _ in range(200)])
print("mean distance of a random kernel from the deterministic one:",
      np.sqrt(((draws - det) ** 2).sum(axis=(1, 2, 3, 4))).mean() / np.linalg.norm(det))

# with rescaling, kept entries are divided by their keep probability so the mean matches
scaled = TuckerConvLayer(layer.factors, theta=0.8, rescale=True)
mean = np.mean([effective_weight(scaled, LayerMode.RANDOMIZED, rng=rng) for _ in range(4000)], axis=0)
print("rescaled mean vs deterministic, relative gap:", np.linalg.norm(mean - det) / np.linalg.norm(det))
