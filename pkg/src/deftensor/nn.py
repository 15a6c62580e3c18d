"""Layer descriptors, parameters and forward/backward passes for small CNNs.

Convolution layers come in five kernel kinds:

``plain``
    dense kernel parameter.
``tucker``
    Tucker core and four factors, with latent dropout on all four modes.
``matrix``
    low-rank matrix special case: a core and a filter-mode factor, identity
    on the other modes, dropout on the filter mode only.
``binary``
    dense latent kernel, binarized XNOR-style in the forward pass.
``binary-tucker``
    Tucker kernel with latent dropout, reconstructed first and then
    binarized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import _conv
from .binary import SteVariant
from .factorized import DropoutMasks, LayerMode, core_mask, sample_masks
from .tensor import default_ranks, tucker_decompose, unfold

KERNEL_KINDS = ("plain", "tucker", "matrix", "binary", "binary-tucker")
TUCKER_KINDS = ("tucker", "binary-tucker")
RANDOMIZED_KINDS = ("tucker", "matrix", "binary-tucker")
BINARY_KINDS = ("binary", "binary-tucker")


# ---------------------------------------------------------------------------
# layer descriptors


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: tuple = (3, 3)
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    kind: str = "plain"

    def __post_init__(self):
        for name in ("kernel", "stride", "padding"):
            object.__setattr__(self, name, _conv.pair(getattr(self, name)))
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")


def Conv1D(out_channels, kernel, stride=1, padding=0, kind="plain") -> Conv:
    """1-D convolution over ``(C, 1, L)`` inputs, as a ``1 x k`` 2-D kernel."""
    return Conv(out_channels, (1, kernel), (1, stride), (0, padding), kind)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: tuple = (2, 2)
    stride: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kernel", _conv.pair(self.kernel))
        stride = self.kernel if self.stride is None else _conv.pair(self.stride)
        object.__setattr__(self, "stride", stride)


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    out_features: int


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple
    num_classes: int
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = self.shapes()
        if not isinstance(self.layers[-1], Linear) or shapes[-1] != (self.num_classes,):
            raise ValueError("the last layer must be a Linear head with num_classes outputs")

    def shapes(self) -> list:
        """Per-example activation shape after each layer (input first)."""
        shape = self.input_shape
        out = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv needs a (C, H, W) input, got {shape}")
                c, h, w = shape
                ho = _conv.output_size(h, layer.kernel[0], layer.stride[0], layer.padding[0])
                wo = _conv.output_size(w, layer.kernel[1], layer.stride[1], layer.padding[1])
                shape = (layer.out_channels, ho, wo)
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: pooling needs a (C, H, W) input")
                c, h, w = shape
                ho = _conv.output_size(h, layer.kernel[0], layer.stride[0], 0)
                wo = _conv.output_size(w, layer.kernel[1], layer.stride[1], 0)
                shape = (c, ho, wo)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Linear):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: linear layer needs a flat input, got {shape}")
                shape = (layer.out_features,)
            elif not isinstance(layer, ReLU):
                raise TypeError(f"unknown layer descriptor {layer!r}")
            out.append(shape)
        return out

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": type(layer).__name__}
            d.update({k: list(v) if isinstance(v, tuple) else v for k, v in vars(layer).items()})
            layers.append(d)
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        types = {"Conv": Conv, "ReLU": ReLU, "MaxPool": MaxPool, "Flatten": Flatten, "Linear": Linear}
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = types[item.pop("type")]
            layers.append(kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in item.items()}))
        return cls(d["name"], tuple(d["input_shape"]), int(d["num_classes"]), tuple(layers))


# ---------------------------------------------------------------------------
# model zoo


def small_cnn_2d(
    input_shape=(1, 8, 8),
    num_classes: int = 4,
    widths: Sequence[int] = (8, 16, 16),
    hidden: int = 32,
    kind: str = "plain",
    binary_first_last: bool = False,
) -> ModelSpec:
    """Three 3x3 conv + max-pool blocks followed by two linear layers.

    Binary variants drop the ReLU in front of each binarized convolution (the
    sign is the nonlinearity there). The first convolution stays real-valued
    unless ``binary_first_last`` is set; the linear head is always real.
    """
    binary = kind in BINARY_KINDS
    real_kind = {"binary": "plain", "binary-tucker": "tucker"}.get(kind, kind)
    layers = []
    for i, width in enumerate(widths):
        layer_kind = kind if (i > 0 or binary_first_last or not binary) else real_kind
        layers.append(Conv(width, 3, 1, 1, layer_kind))
        if not binary:
            layers.append(ReLU())
        layers.append(MaxPool(2))
    layers += [Flatten(), Linear(hidden), ReLU(), Linear(num_classes)]
    return ModelSpec("small-cnn-2d", tuple(input_shape), num_classes, tuple(layers))


SOUNDNET5_CONVS = (
    # in, out, kernel, stride, padding (the 1-D part of each 1 x k descriptor)
    (1, 16, 64, 2, 32),
    (16, 32, 32, 2, 16),
    (32, 64, 16, 2, 8),
    (64, 128, 8, 2, 4),
    (128, 256, 4, 2, 2),
)


def soundnet5_1d(length: int = 16000, kind: str = "plain", pool: int = 3) -> ModelSpec:
    """SoundNet-5 on raw ``(1, 1, length)`` audio.

    The pooling width is not part of the published descriptor; width 3 maps a
    one-second 16 kHz clip to the 512 features the first linear layer expects.
    """
    layers = []
    for _, out, k, s, p in SOUNDNET5_CONVS:
        layers += [Conv1D(out, k, s, p, kind), ReLU(), MaxPool((1, pool))]
    layers += [Flatten(), Linear(256), ReLU(), Linear(12)]
    return ModelSpec("soundnet5-1d", (1, 1, length), 12, tuple(layers))


def build_model(name: str, **kwargs) -> ModelSpec:
    if name == "small-cnn-2d":
        return small_cnn_2d(**kwargs)
    if name == "soundnet5-1d":
        return soundnet5_1d(**kwargs)
    if name == "custom-from-config":
        return ModelSpec.from_dict(kwargs["spec"])
    raise ValueError(f"unknown model spec {name!r}")


# ---------------------------------------------------------------------------
# parameters and models


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None
    momentum: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum is None:
            self.momentum = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


def layer_ranks(kernel_shape, ranks="half") -> tuple:
    """Resolve a rank setting into per-mode Tucker ranks for one kernel.

    ``"half"`` halves every mode (rounding up), ``"full"`` keeps them all, a
    float in ``(0, 1]`` scales each mode, and an explicit tuple is used as is.
    """
    if ranks == "half":
        return default_ranks(kernel_shape)
    if ranks == "full":
        return tuple(kernel_shape)
    if isinstance(ranks, float):
        return tuple(max(1, min(s, math.ceil(ranks * s))) for s in kernel_shape)
    return tuple(int(r) for r in ranks)


@dataclass
class Model:
    """A :class:`ModelSpec` together with its parameters and dropout settings."""

    spec: ModelSpec
    params: dict
    theta: float = 1.0
    rescale: bool = False
    ste: SteVariant = SteVariant.CLIPPED_IDENTITY

    def parameters(self):
        return [p for p in self.params.values() if p.trainable]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def copy(self, **changes) -> "Model":
        params = {
            k: Parameter(p.value.copy(), p.grad.copy(), p.momentum.copy(), p.trainable)
            for k, p in self.params.items()
        }
        return replace(self, params=params, **changes)

    def kinds(self) -> list:
        return [layer.kind for layer in self.spec.layers if isinstance(layer, Conv)]

    @property
    def randomized(self) -> bool:
        return self.theta < 1 and any(k in RANDOMIZED_KINDS for k in self.kinds())


def init_model(spec: ModelSpec, seed=0, ranks="half", theta=1.0, rescale=False, ste=SteVariant.CLIPPED_IDENTITY) -> Model:
    """He-initialized parameters; factorized kernels are decomposed from them."""
    rng = np.random.default_rng(seed)
    params = {}
    shape = spec.input_shape
    shapes = spec.shapes()
    for i, layer in enumerate(spec.layers):
        shape = shapes[i]
        if isinstance(layer, Conv):
            kshape = (layer.out_channels, shape[0]) + layer.kernel
            fan_in = int(np.prod(kshape[1:]))
            w = rng.standard_normal(kshape) * math.sqrt(2.0 / fan_in)
            params.update(_kernel_params(i, layer.kind, w, ranks))
            params[f"{i}.bias"] = Parameter(np.zeros(layer.out_channels))
        elif isinstance(layer, Linear):
            w = rng.standard_normal((shape[0], layer.out_features)) * math.sqrt(2.0 / shape[0])
            params[f"{i}.weight"] = Parameter(w)
            params[f"{i}.bias"] = Parameter(np.zeros(layer.out_features))
    return Model(spec, params, theta, rescale, SteVariant.parse(ste))


def _kernel_params(i, kind, w, ranks) -> dict:
    if kind in ("plain", "binary"):
        return {f"{i}.weight": Parameter(w)}
    r = layer_ranks(w.shape, ranks)
    if kind == "matrix":
        u, s, vt = np.linalg.svd(unfold(w, 0), full_matrices=False)
        core = (s[: r[0], None] * vt[: r[0]]).reshape((r[0],) + w.shape[1:])
        return {f"{i}.core": Parameter(core), f"{i}.factor0": Parameter(u[:, : r[0]])}
    f = tucker_decompose(w, r)
    out = {f"{i}.core": Parameter(f.core)}
    out.update({f"{i}.factor{n}": Parameter(u) for n, u in enumerate(f.factors)})
    return out


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class _Pass:
    tape: ad.Tape
    mode: LayerMode
    rng: object
    theta: float
    masks: dict = field(default_factory=dict)
    surrogate: bool = False


def _realize_masks(model, ctx, index, ranks) -> DropoutMasks | None:
    """Masks for one factorized layer, or ``None`` when no dropout applies."""
    if ctx.mode is LayerMode.DETERMINISTIC:
        return None
    if ctx.mode is LayerMode.REPLAY:
        masks = ctx.masks[index]
    elif ctx.theta >= 1:
        return None
    else:
        if ctx.rng is None:
            raise ValueError("randomized forward passes need an explicit rng")
        masks = sample_masks(ranks, ctx.theta, ctx.rng)
    ctx.tape.masks[index] = masks
    return masks


def _kernel(model: Model, ctx: _Pass, index: int, layer: Conv, var):
    kind = layer.kind
    if kind in ("plain", "binary"):
        return var(f"{index}.weight")
    core = var(f"{index}.core")
    if kind == "matrix":
        r = core.shape[0]
        masks = _realize_masks(model, ctx, index, (r,) + core.shape[1:])
        if masks is not None:
            scale = 1.0
            if model.rescale:
                scale = 0.0 if ctx.theta == 0 else 1.0 / ctx.theta
            core = ad.mul(core, masks.lambdas[0][:, None, None, None] * scale)
        return ad.mode_product(core, var(f"{index}.factor0"), 0)
    masks = _realize_masks(model, ctx, index, core.shape)
    if masks is not None:
        scale = 1.0
        if model.rescale:
            scale = 0.0 if ctx.theta == 0 else ctx.theta ** (-core.value.ndim)
        core = ad.mul(core, core_mask(masks) * scale)
    w = core
    for n in range(4):
        w = ad.mode_product(w, var(f"{index}.factor{n}"), n)
    return w


def _binary_conv(x, w, layer: Conv, ste: SteVariant, surrogate: bool):
    kh, kw = layer.kernel
    box = np.full((1, 1, kh, kw), 1.0 / (kh * kw))
    k = ad.conv2d(ad.mean(ad.absolute(x), axis=1, keepdims=True), box, layer.stride, layer.padding)
    alpha = ad.reshape(ad.mean(ad.absolute(w), axis=(1, 2, 3)), (1, -1, 1, 1))
    out = ad.conv2d(
        ad.sign_ste(x, ste, surrogate), ad.sign_ste(w, ste, surrogate), layer.stride, layer.padding
    )
    return ad.mul(ad.mul(out, k), alpha)


def forward(
    model: Model,
    x,
    mode: LayerMode = LayerMode.RANDOMIZED,
    rng=None,
    *,
    masks: dict | None = None,
    theta: float | None = None,
    input_grad: bool = False,
    param_grad: bool = False,
    surrogate: bool = False,
):
    """Run the model on a batch ``x`` of shape ``(N,) + input_shape``.

    Returns ``(logits, tape)``. Randomized layers draw fresh masks from ``rng``
    in layer order; the realized masks are kept in ``tape.masks`` so the same
    network can be replayed with ``mode=LayerMode.REPLAY, masks=tape.masks``.
    ``theta`` overrides the model's keep probability for this pass only.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != model.spec.input_shape:
        raise ValueError(f"input shape {x.shape[1:]} != model input {model.spec.input_shape}")
    tape = ad.Tape()
    ctx = _Pass(tape, mode, rng, model.theta if theta is None else theta, dict(masks or {}), surrogate)
    if mode is LayerMode.REPLAY and masks is None:
        raise ValueError("replay mode needs masks")

    def var(name):
        if name not in tape.params:
            p = model.params[name]
            tape.params[name] = tape.leaf(p.value, requires_grad=param_grad and p.trainable)
        return tape.params[name]

    h = tape.leaf(x, requires_grad=input_grad)
    tape.input = h
    for i, layer in enumerate(model.spec.layers):
        if isinstance(layer, Conv):
            w = _kernel(model, ctx, i, layer, var)
            tape.kernels[i] = w.value
            if layer.kind in BINARY_KINDS:
                h = _binary_conv(h, w, layer, model.ste, surrogate)
            else:
                h = ad.conv2d(h, w, layer.stride, layer.padding)
            h = ad.add(h, ad.reshape(var(f"{i}.bias"), (1, -1, 1, 1)))
        elif isinstance(layer, ReLU):
            h = ad.relu(h)
        elif isinstance(layer, MaxPool):
            h = ad.maxpool2d(h, layer.kernel, layer.stride)
        elif isinstance(layer, Flatten):
            h = ad.reshape(h, (h.shape[0], -1))
        elif isinstance(layer, Linear):
            h = ad.add(ad.matmul(h, var(f"{i}.weight")), var(f"{i}.bias"))
    return h, tape


def backward(tape: ad.Tape, loss) -> dict:
    """Reverse pass; returns ``{"input": dL/dx, param_name: dL/dparam, ...}``.

    Entries are zero arrays for leaves the loss does not depend on.
    """
    tape.backward(loss)
    grads = {}
    if tape.input is not None and tape.input.requires_grad:
        grads["input"] = _grad_or_zero(tape.input)
    for name, v in tape.params.items():
        if v.requires_grad:
            grads[name] = _grad_or_zero(v)
    return grads


def _grad_or_zero(v):
    return np.zeros_like(v.value) if v.grad is None else v.grad


def predict(model, x, mode=LayerMode.RANDOMIZED, rng=None, **kwargs) -> np.ndarray:
    logits, _ = forward(model, x, mode, rng, **kwargs)
    return np.argmax(logits.value, axis=1)


def input_gradient(model, x, y, mode=LayerMode.RANDOMIZED, rng=None, **kwargs):
    """Gradient of the summed cross-entropy w.r.t. the input batch, and the losses."""
    logits, tape = forward(model, x, mode, rng, input_grad=True, **kwargs)
    loss = ad.cross_entropy(logits, y, reduction="sum")
    return backward(tape, loss)["input"], float(loss.value)


# ---------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    drop_epochs: tuple = (150, 250)
    drop_factor: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.drop_epochs if epoch >= e)
        return self.lr * self.drop_factor**drops


def sgd_step(params, config: OptimizerConfig, epoch: int) -> None:
    """In-place momentum SGD: ``v = m v + g + wd w``, ``w -= lr(epoch) v``."""
    lr = config.lr_at(epoch)
    for p in params:
        p.momentum *= config.momentum
        p.momentum += p.grad + config.weight_decay * p.value
        p.value -= lr * p.momentum


def accumulate_grads(model: Model, grads: dict) -> None:
    for name, g in grads.items():
        if name != "input":
            model.params[name].grad += g
