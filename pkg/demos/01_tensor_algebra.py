"""Tucker algebra on a convolution kernel.

Unfold a kernel, apply n-mode products, decompose it with HOSVD/HOOI and
watch the reconstruction error fall as the ranks grow.
"""

import numpy as np

from deftensor import fold, mode_product, relative_error, tucker_decompose, tucker_reconstruct, unfold

rng = np.random.default_rng(0)
w = rng.standard_normal((16, 8, 3, 3))

# mode-1 unfolding puts the input channels on the rows
print("mode-1 unfolding:", unfold(w, 1).shape)
assert np.array_equal(fold(unfold(w, 1), 1, w.shape), w)

# an n-mode product mixes one mode and leaves the rest alone
mix = rng.standard_normal((4, 8))
print("after mode-1 product:", mode_product(w, mix, 1).shape)

# full ranks reproduce the kernel; a random kernel has no low-rank structure,
# so smaller ranks lose accuracy quickly (trained kernels compress far better)
for ranks in [(16, 8, 3, 3), (8, 4, 3, 3), (4, 2, 2, 2), (1, 1, 1, 1)]:
    factors, errors = tucker_decompose(w, ranks, return_errors=True)
    approx = tucker_reconstruct(factors)
    n_params = factors.core.size + sum(u.size for u in factors.factors)
    print(f"ranks {ranks}: {n_params:5d} params, relative error {relative_error(w, approx):.3e}, "
          f"HOOI sweeps {len(errors)}")
