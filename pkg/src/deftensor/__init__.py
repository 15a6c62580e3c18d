"""Randomized tensorized convolutions, binary networks and white-box attacks in numpy."""

from .tensor import (
    TuckerFactors,
    fold,
    mode_product,
    multi_mode_product,
    read_tensor,
    relative_error,
    tucker_decompose,
    tucker_reconstruct,
    unfold,
    write_tensor,
)
from .factorized import DropoutMasks, LayerMode, TuckerConvLayer, effective_weight, sample_masks
from .binary import SteVariant, binarize_weight, binary_conv_forward, compute_input_scale
from .nn import Model, ModelSpec, build_model, forward, init_model, predict
from .attacks import AttackConfig, bim, bpda_pgd, fgsm, make_config, pgd

__version__ = "0.1.0"

__all__ = [
    "TuckerFactors",
    "fold",
    "mode_product",
    "multi_mode_product",
    "read_tensor",
    "relative_error",
    "tucker_decompose",
    "tucker_reconstruct",
    "unfold",
    "write_tensor",
    "DropoutMasks",
    "LayerMode",
    "TuckerConvLayer",
    "effective_weight",
    "sample_masks",
    "SteVariant",
    "binarize_weight",
    "binary_conv_forward",
    "compute_input_scale",
    "Model",
    "ModelSpec",
    "build_model",
    "forward",
    "init_model",
    "predict",
    "AttackConfig",
    "bim",
    "bpda_pgd",
    "fgsm",
    "make_config",
    "pgd",
]
