"""A small tape-based reverse-mode differentiation engine on numpy arrays.

Every primitive computes its forward value eagerly and, when at least one
input requires a gradient, appends the output node to the shared
:class:`Tape` together with a vector-Jacobian closure. :meth:`Tape.backward`
walks the recorded nodes in reverse creation order, which is a valid reverse
topological order because a node is always recorded after its inputs.
"""

from __future__ import annotations

import numpy as np

from . import _conv
from .binary import SteVariant, sign, ste_derivative, ste_surrogate
from .tensor import mode_product as _mode_product

__all__ = [
    "Tape",
    "Var",
    "TapeConsumedError",
    "add",
    "mul",
    "matmul",
    "relu",
    "reshape",
    "conv2d",
    "maxpool2d",
    "mode_product",
    "sign_ste",
    "absolute",
    "mean",
    "cross_entropy",
]


class TapeConsumedError(RuntimeError):
    pass


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes = []
        self.consumed = False
        # layer index -> realized DropoutMasks / kernels, filled by the model
        self.masks = {}
        self.kernels = {}
        self.input = None
        self.params = {}

    def leaf(self, value, requires_grad: bool = True) -> "Var":
        return Var(value, self, requires_grad)

    def backward(self, loss: "Var") -> None:
        if self.consumed:
            raise TapeConsumedError("backward() already ran on this tape")
        if loss.value.size != 1:
            raise ValueError("backward() needs a scalar loss")
        self.consumed = True
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            if node._parents:
                # free intermediates; leaves keep theirs
                node.grad = None


class Var:
    __slots__ = ("value", "grad", "tape", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, tape=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(value, parents, vjp) -> Var:
    parents = tuple(parents)
    tape = next((p.tape for p in parents if p.tape is not None), None)
    requires = any(p.requires_grad for p in parents)
    out = Var(value, tape, requires)
    if requires:
        if tape is None:
            raise RuntimeError("gradient-requiring inputs must live on a tape")
        out._parents = parents
        out._vjp = vjp
        tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None,
        ),
    )


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value @ b.value,
        (a, b),
        lambda g: (
            g @ b.value.T if a.requires_grad else None,
            a.value.T @ g if b.requires_grad else None,
        ),
    )


def relu(x) -> Var:
    x = _lift(x)
    on = x.value > 0
    return _record(np.maximum(x.value, 0.0), (x,), lambda g: (g * on,))


def reshape(x, shape) -> Var:
    x = _lift(x)
    return _record(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def absolute(x) -> Var:
    x = _lift(x)
    return _record(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),))


def mean(x, axis=None, keepdims=False) -> Var:
    x = _lift(x)
    value = x.value.mean(axis=axis, keepdims=keepdims)
    count = x.value.size // max(value.size, 1)

    def vjp(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return _record(value, (x,), vjp)


def conv2d(x, w, stride=(1, 1), padding=(0, 0)) -> Var:
    x, w = _lift(x), _lift(w)
    stride, padding = _conv.pair(stride), _conv.pair(padding)

    def vjp(g):
        return _conv.conv2d_backward(
            g, x.value, w.value, stride, padding,
            need_input=x.requires_grad, need_weight=w.requires_grad,
        )

    return _record(_conv.conv2d(x.value, w.value, stride, padding), (x, w), vjp)


def maxpool2d(x, kernel, stride=None) -> Var:
    x = _lift(x)
    out, idx = _conv.maxpool2d(x.value, kernel, stride)
    return _record(
        out, (x,), lambda g: (_conv.maxpool2d_backward(g, idx, x.shape, kernel, stride),)
    )


def mode_product(t, m, mode: int) -> Var:
    """Differentiable n-mode product ``t x_mode m``."""
    t, m = _lift(t), _lift(m)

    def vjp(g):
        gt = _mode_product(g, m.value.T, mode) if t.requires_grad else None
        gm = None
        if m.requires_grad:
            gm = np.tensordot(
                np.moveaxis(g, mode, 0), np.moveaxis(t.value, mode, 0),
                axes=(list(range(1, g.ndim)), list(range(1, g.ndim))),
            )
        return gt, gm

    return _record(_mode_product(t.value, m.value, mode), (t, m), vjp)


def sign_ste(x, variant: SteVariant = SteVariant.CLIPPED_IDENTITY, surrogate: bool = False) -> Var:
    """``sgn`` in the forward pass, the chosen STE in the backward pass.

    With ``surrogate=True`` the forward value is the smooth function whose
    exact derivative is the STE, which makes the op checkable by finite
    differences.
    """
    x = _lift(x)
    value = ste_surrogate(x.value, variant) if surrogate else sign(x.value)
    return _record(value, (x,), lambda g: (g * ste_derivative(x.value, variant),))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels, reduction: str = "mean") -> Var:
    """Softmax cross-entropy of ``(N, K)`` logits against integer labels."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    z = logits.value.reshape(len(labels), -1)
    k = z.shape[1]
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logp = log_softmax(z)
    losses = -logp[np.arange(len(labels)), labels]
    if reduction == "mean":
        value, scale = losses.mean(), 1.0 / len(labels)
    elif reduction == "sum":
        value, scale = losses.sum(), 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(len(labels)), labels] -= 1.0
        return ((g * scale * d).reshape(logits.shape),)

    return _record(np.asarray(value), (logits,), vjp)
