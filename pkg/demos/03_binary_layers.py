"""XNOR-style binarization.

Weights become alpha * sign(w) per filter and inputs are scaled by the
local mean magnitude K, so the convolution itself only sees +-1 values.
"""

import numpy as np

from deftensor import SteVariant, binarize_weight, compute_input_scale
from deftensor.binary import ste_derivative

rng = np.random.default_rng(2)
w = rng.standard_normal((4, 3, 3, 3))
signs, alpha = binarize_weight(w)
print("alpha per filter:", np.round(alpha, 3))
print("equals the mean absolute weight:", np.allclose(alpha, np.abs(w).mean(axis=(1, 2, 3))))

# alpha minimizes the squared error; nudging it either way only makes things worse
for scale in (0.9, 1.0, 1.1):
    err = np.sum((w - scale * alpha[:, None, None, None] * signs) ** 2)
    print(f"alpha x {scale}: squared error {err:.3f}")

x = rng.standard_normal((3, 6, 6))
k = compute_input_scale(x, 3, 3, stride=1, padding=1)
print("K map:", k.shape, "range", k.min().round(3), k.max().round(3))

# the three surrogate derivatives used to backpropagate through sign
z = np.linspace(-2, 2, 9)
for variant in SteVariant:
    print(f"{variant.value:>6}:", np.round(ste_derivative(z, variant), 3))
