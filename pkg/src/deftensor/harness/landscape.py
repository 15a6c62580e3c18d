"""Loss surface of one example on a 2-D slice of input space.

The slice is spanned by the normalized input gradient of the deterministic
network, ``d_grad``, and a random unit direction made orthogonal to it,
``d_orth``. Grid point ``(u, v)`` holds the loss at ``x + u d_grad + v d_orth``
(no clipping to the pixel range).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..factorized import LayerMode
from .training import NumericError


@dataclass
class LandscapeGrid:
    u: np.ndarray
    v: np.ndarray
    loss: np.ndarray  # loss[i, j] at (u[i], v[j])
    d_grad: np.ndarray
    d_orth: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("u,v,loss\n")
        for i, u in enumerate(self.u):
            for j, v in enumerate(self.v):
                buf.write(f"{float(u)!r},{float(v)!r},{float(self.loss[i, j])!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, d_grad=None, d_orth=None) -> "LandscapeGrid":
        lines = text.strip().splitlines()
        if lines[0] != "u,v,loss":
            raise ValueError("not a landscape grid")
        data = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
        u = np.unique(data[:, 0])
        v = np.unique(data[:, 1])
        return cls(u, v, data[:, 2].reshape(len(u), len(v)), d_grad, d_orth)


def _unit(a) -> np.ndarray:
    norm = np.linalg.norm(a)
    if not np.isfinite(norm) or norm == 0:
        raise NumericError("cannot normalize a zero or non-finite direction")
    return a / norm


def landscape_directions(model: nn.Model, x, y, rng) -> tuple:
    """``(d_grad, d_orth)`` for one example ``x`` of shape ``input_shape``."""
    g, _ = nn.input_gradient(model, x[None], np.array([y]), LayerMode.DETERMINISTIC)
    d_grad = _unit(g[0])
    r = rng.standard_normal(d_grad.shape)
    d_orth = _unit(r - np.vdot(r, d_grad) * d_grad)
    return d_grad, d_orth


def loss_landscape(
    model: nn.Model,
    x,
    y: int,
    rng,
    *,
    n: int = 41,
    extent: float = 0.5,
    mode: LayerMode = LayerMode.DETERMINISTIC,
    mask_rng=None,
    batch_size: int = 256,
) -> LandscapeGrid:
    """Cross-entropy on an ``n x n`` grid over ``[-extent, extent]^2``.

    ``rng`` draws the orthogonal direction. With ``mode=RANDOMIZED`` each
    batch of grid points shares one mask draw from ``mask_rng``.
    """
    if n < 2:
        raise ValueError("the grid needs at least two points per axis")
    x = np.asarray(x, dtype=np.float64)
    d_grad, d_orth = landscape_directions(model, x, y, rng)
    u = np.linspace(-extent, extent, n)
    v = np.linspace(-extent, extent, n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    points = x[None] + uu.reshape(-1, *([1] * x.ndim)) * d_grad + vv.reshape(-1, *([1] * x.ndim)) * d_orth
    labels = np.full(len(points), y)
    losses = np.empty(len(points))
    for start in range(0, len(points), batch_size):
        sl = slice(start, start + batch_size)
        logits, _ = nn.forward(model, points[sl], mode, mask_rng)
        losses[sl] = -ad.log_softmax(logits.value)[np.arange(len(labels[sl])), labels[sl]]
    if not np.all(np.isfinite(losses)):
        raise NumericError("non-finite loss on the landscape grid")
    return LandscapeGrid(u, v, losses.reshape(n, n), d_grad, d_orth)
