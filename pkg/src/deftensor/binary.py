"""XNOR-style binary convolutions and straight-through estimators.

A binary convolution approximates ``I * W`` by
``(sgn(I) (*) sgn(W)) . K . alpha`` where ``alpha[f]`` is the mean absolute
value of filter ``f`` and ``K`` is the local average of the channel-mean of
``|I|`` over each receptive field. ``sgn(0)`` is taken to be ``+1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _conv

__all__ = [
    "SteVariant",
    "BinaryConvState",
    "sign",
    "binarize_weight",
    "compute_input_scale",
    "binary_conv_forward",
    "ste_derivative",
    "ste_surrogate",
]


class SteVariant(enum.Enum):
    CLIPPED_IDENTITY = "id"
    TANH = "tanh"
    TANH_SCALED = "tanh0.75"

    @classmethod
    def parse(cls, value) -> "SteVariant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if value in (v.value, v.name, v.name.lower()):
                return v
        raise ValueError(f"unknown STE variant {value!r}")


TANH_SCALE = 0.75


def sign(x) -> np.ndarray:
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def ste_surrogate(x, variant: SteVariant) -> np.ndarray:
    """Smooth stand-in for ``sgn`` whose derivative is the STE."""
    x = np.asarray(x, dtype=np.float64)
    if variant is SteVariant.CLIPPED_IDENTITY:
        return np.clip(x, -1.0, 1.0)
    if variant is SteVariant.TANH:
        return np.tanh(x)
    return np.tanh(TANH_SCALE * x)


def ste_derivative(x, variant: SteVariant) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if variant is SteVariant.CLIPPED_IDENTITY:
        return (np.abs(x) <= 1.0).astype(np.float64)
    if variant is SteVariant.TANH:
        return 1.0 - np.tanh(x) ** 2
    return TANH_SCALE * (1.0 - np.tanh(TANH_SCALE * x) ** 2)


def binarize_weight(w):
    """Return ``(sgn(w), alpha)`` with ``alpha[f] = mean(|w[f]|)``.

    ``alpha`` minimizes ``||w_f - a * sgn(w_f)||^2`` over ``a`` in closed form.
    """
    w = np.asarray(w, dtype=np.float64)
    alpha = np.abs(w).reshape(w.shape[0], -1).mean(axis=1)
    return sign(w), alpha


def compute_input_scale(i, kernel_h: int, kernel_w: int, stride=1, padding=0) -> np.ndarray:
    """Per-location input scale ``K``.

    ``i`` is ``(C, H, W)`` (giving ``K`` of shape ``(1, Ho, Wo)``) or batched
    ``(N, C, H, W)`` (giving ``(N, 1, Ho, Wo)``).
    """
    i = np.asarray(i, dtype=np.float64)
    batched = i.ndim == 4
    x = i if batched else i[None]
    a = np.abs(x).mean(axis=1, keepdims=True)
    box = np.full((1, 1, kernel_h, kernel_w), 1.0 / (kernel_h * kernel_w))
    k = _conv.conv2d(a, box, stride, padding)
    return k if batched else k[0]


@dataclass(frozen=True)
class BinaryConvState:
    sign_weight: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_weight(cls, w) -> "BinaryConvState":
        return cls(*binarize_weight(w))


def binary_conv_forward(state: BinaryConvState, i, stride=1, padding=0) -> np.ndarray:
    """Binary convolution of ``(C, H, W)`` or ``(N, C, H, W)`` input."""
    i = np.asarray(i, dtype=np.float64)
    batched = i.ndim == 4
    x = i if batched else i[None]
    _, _, kh, kw = state.sign_weight.shape
    k = compute_input_scale(x, kh, kw, stride, padding)
    out = _conv.conv2d(sign(x), state.sign_weight, stride, padding)
    out = out * k * state.alpha[None, :, None, None]
    return out if batched else out[0]
