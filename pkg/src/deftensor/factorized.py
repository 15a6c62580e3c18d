"""Tucker-parametrized convolution kernels with latent tensor dropout.

A kernel of shape ``(F, C, H, W)`` is stored as a Tucker core plus four
factor matrices ``U^F (F x R_F)``, ``U^C``, ``U^H``, ``U^W``. Each forward
pass draws one Bernoulli keep-vector per mode over the *ranks*; a core entry
survives only if all four of its indices are kept. The masked core is then
projected back with the original factors, so the reconstructed kernel stays
dense even though the latent representation is sparse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .tensor import (
    TuckerFactors,
    fold,
    mode_product,
    tucker_decompose,
    tucker_reconstruct,
    unfold,
)

__all__ = [
    "LayerMode",
    "DropoutMasks",
    "TuckerConvLayer",
    "sample_masks",
    "core_mask",
    "randomized_weight",
    "randomized_weight_reference",
    "effective_weight",
    "init_from_dense",
    "matrix_layer",
    "matrixized_weight",
]


class LayerMode(enum.Enum):
    DETERMINISTIC = "deterministic"  # theta treated as 1
    RANDOMIZED = "randomized"  # fresh masks on every call
    REPLAY = "replay"  # caller supplies the masks


@dataclass(frozen=True)
class DropoutMasks:
    """Per-mode 0/1 keep vectors and the seed that produced them (if known)."""

    lambdas: tuple
    seed: object = None

    def __post_init__(self):
        lambdas = tuple(np.asarray(lam, dtype=np.float64) for lam in self.lambdas)
        for lam in lambdas:
            if lam.ndim != 1 or not np.all((lam == 0) | (lam == 1)):
                raise ValueError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def ranks(self) -> tuple:
        return tuple(lam.size for lam in self.lambdas)

    def matrices(self) -> list:
        """The diagonal sketching matrices ``diag(lambda)``; for tests only."""
        return [np.diag(lam) for lam in self.lambdas]

    @classmethod
    def ones(cls, ranks):
        return cls(tuple(np.ones(r) for r in ranks))


@dataclass(frozen=True)
class TuckerConvLayer:
    factors: TuckerFactors
    theta: float = 1.0
    rescale: bool = False
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.factors.core.ndim != 4:
            raise ValueError("a convolution kernel needs an order-4 core")

    @property
    def ranks(self) -> tuple:
        return self.factors.ranks

    @property
    def kernel_shape(self) -> tuple:
        return self.factors.shape


def sample_masks(ranks, theta: float, rng=None) -> DropoutMasks:
    """Draw i.i.d. Bernoulli(theta) keep vectors, one per mode.

    ``rng`` may be a ``numpy.random.Generator`` or anything accepted by
    ``numpy.random.default_rng``; an integer seed is recorded on the result.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    lambdas = tuple((gen.random(int(r)) < theta).astype(np.float64) for r in ranks)
    return DropoutMasks(lambdas, seed=seed)


def core_mask(masks: DropoutMasks) -> np.ndarray:
    """Elementwise core mask: the outer product of the keep vectors."""
    out = np.ones(())
    for lam in masks.lambdas:
        out = np.multiply.outer(out, lam)
    return out


def _check_masks(layer: TuckerConvLayer, masks: DropoutMasks) -> None:
    if masks.ranks != tuple(layer.ranks):
        raise ValueError(f"mask lengths {masks.ranks} do not match ranks {layer.ranks}")


def _rescale_factor(layer: TuckerConvLayer) -> float:
    if not layer.rescale:
        return 1.0
    if layer.theta == 0:
        return 0.0
    return layer.theta ** (-layer.factors.core.ndim)


def randomized_weight(layer: TuckerConvLayer, masks: DropoutMasks) -> np.ndarray:
    """Masked core projected back with the unmasked factors.

    The sketching matrices are never formed: the core is zeroed elementwise.
    """
    _check_masks(layer, masks)
    core = layer.factors.core * core_mask(masks) * _rescale_factor(layer)
    return tucker_reconstruct(TuckerFactors(core, layer.factors.factors))


def randomized_weight_reference(layer: TuckerConvLayer, masks: DropoutMasks) -> np.ndarray:
    """Literal two-stage evaluation with explicit diagonal matrices.

    The core is contracted with ``M_n`` on every mode, then with the
    randomized factors ``U_n M_n^T``. Slow; kept as an oracle for
    :func:`randomized_weight`.
    """
    _check_masks(layer, masks)
    mats = masks.matrices()
    core = layer.factors.core
    for n, m in enumerate(mats):
        core = mode_product(core, m, n)
    core = core * _rescale_factor(layer)
    for n, (u, m) in enumerate(zip(layer.factors.factors, mats)):
        core = mode_product(core, u @ m.T, n)
    return core


def effective_weight(
    layer: TuckerConvLayer,
    mode: LayerMode = LayerMode.RANDOMIZED,
    rng=None,
    masks: DropoutMasks | None = None,
) -> np.ndarray:
    """Kernel used by one forward pass under the given layer mode."""
    if mode is LayerMode.DETERMINISTIC:
        return tucker_reconstruct(layer.factors)
    if mode is LayerMode.REPLAY:
        if masks is None:
            raise ValueError("replay mode needs masks")
        return randomized_weight(layer, masks)
    return randomized_weight(layer, sample_masks(layer.ranks, layer.theta, rng))


def init_from_dense(
    w, ranks=None, theta: float = 1.0, *, rescale: bool = False, stride=(1, 1), padding=(0, 0)
) -> TuckerConvLayer:
    """Decompose a dense ``(F, C, H, W)`` kernel into a Tucker layer."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"expected an order-4 kernel, got shape {w.shape}")
    if ranks is None:
        ranks = w.shape
    factors = tucker_decompose(w, ranks)
    return TuckerConvLayer(factors, theta, rescale, tuple(stride), tuple(padding))


def matrix_layer(w, rank: int, theta: float = 1.0, **kwargs) -> TuckerConvLayer:
    """Low-rank matrix special case: identity factors on modes 1..3.

    The mode-0 unfolding is factored by truncated SVD, ``W_(0) ~ U (S V^T)``;
    ``S V^T`` folded back is the core.
    """
    w = np.asarray(w, dtype=np.float64)
    u, s, vt = np.linalg.svd(unfold(w, 0), full_matrices=False)
    core = fold(s[:rank, None] * vt[:rank], 0, (rank,) + w.shape[1:])
    factors = (u[:, :rank],) + tuple(np.eye(d) for d in w.shape[1:])
    return TuckerConvLayer(TuckerFactors(core, factors), theta, **kwargs)


def _is_matrix_configuration(layer: TuckerConvLayer) -> bool:
    return all(
        u.shape[0] == u.shape[1] and np.array_equal(u, np.eye(u.shape[0]))
        for u in layer.factors.factors[1:]
    )


def matrixized_weight(layer: TuckerConvLayer, mask_f, *, via_unfolding: bool = False) -> np.ndarray:
    """Kernel of a matrix-configured layer with dropout on the filter mode only.

    With ``via_unfolding`` the result is computed as the masked matrix product
    ``U^F diag(mask) G_(0)`` and folded back; otherwise through the tensor path.
    """
    if not _is_matrix_configuration(layer):
        raise ValueError("layer factors on modes 1..3 must be identities")
    mask_f = np.asarray(mask_f, dtype=np.float64)
    # only the filter mode is randomized, so rescaling compensates one theta
    scale = 1.0
    if layer.rescale:
        scale = 0.0 if layer.theta == 0 else 1.0 / layer.theta
    if via_unfolding:
        mat = layer.factors.factors[0] @ (mask_f[:, None] * unfold(layer.factors.core, 0))
        return fold(mat * scale, 0, layer.kernel_shape)
    masks = DropoutMasks((mask_f, *(np.ones(r) for r in layer.ranks[1:])))
    return randomized_weight(replace(layer, rescale=False), masks) * scale
