"""Model and layer checkpoints.

A model checkpoint is one JSON manifest line followed by tensor records in
the :func:`deftensor.tensor.write_tensor` format, one per parameter value and
one per momentum buffer (``<name>#momentum``).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..binary import SteVariant
from ..factorized import TuckerConvLayer
from ..nn import Model, ModelSpec, Parameter
from ..tensor import TuckerFactors, read_tensor, write_tensor

FORMAT = "deftensor-checkpoint"
LAYER_FORMAT = "deftensor-layer"
VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable checkpoints or ones that do not match a config."""


def save_checkpoint(path, model: Model, *, epoch: int = 0, seeds=None, config=None) -> None:
    names = sorted(model.params)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "spec": model.spec.to_dict(),
        "epoch": int(epoch),
        "theta": float(model.theta),
        "rescale": bool(model.rescale),
        "ste": model.ste.value,
        "seeds": dict(seeds or {}),
        "config": dict(config or {}),
        "tensors": names,
        "trainable": [n for n in names if model.params[n].trainable],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        fp.write((json.dumps(manifest, sort_keys=True) + "\n").encode())
        for name in names:
            write_tensor(fp, model.params[name].value, name)
            write_tensor(fp, model.params[name].momentum, name + "#momentum")


def read_manifest(path) -> dict:
    try:
        with open(path, "rb") as fp:
            return _manifest(fp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def _manifest(fp, path) -> dict:
    try:
        manifest = json.loads(fp.readline())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed manifest") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a model checkpoint")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    return manifest


def load_checkpoint(path, expected_spec: ModelSpec | None = None) -> tuple:
    """Return ``(model, manifest)``; raises if the spec differs from ``expected_spec``."""
    try:
        with open(path, "rb") as fp:
            manifest = _manifest(fp, path)
            spec = ModelSpec.from_dict(manifest["spec"])
            if expected_spec is not None and spec != expected_spec:
                raise CheckpointError(f"{path}: checkpoint model does not match the configured model")
            tensors = {}
            for _ in range(2 * len(manifest["tensors"])):
                name, value = read_tensor(fp)
                tensors[name] = value
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    trainable = set(manifest.get("trainable", manifest["tensors"]))
    params = {}
    for name in manifest["tensors"]:
        if name not in tensors or name + "#momentum" not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        params[name] = Parameter(tensors[name], None, tensors[name + "#momentum"], name in trainable)
    model = Model(
        spec,
        params,
        theta=manifest["theta"],
        rescale=manifest["rescale"],
        ste=SteVariant.parse(manifest["ste"]),
    )
    return model, manifest


def save_layer(fp, layer: TuckerConvLayer) -> None:
    """Write one factorized layer (core, factors, theta, rescale flag) to a binary stream."""
    header = {
        "format": LAYER_FORMAT,
        "theta": float(layer.theta),
        "rescale": bool(layer.rescale),
        "stride": list(layer.stride),
        "padding": list(layer.padding),
        "order": len(layer.factors.factors),
    }
    fp.write((json.dumps(header, sort_keys=True) + "\n").encode())
    write_tensor(fp, layer.factors.core, "core")
    for n, u in enumerate(layer.factors.factors):
        write_tensor(fp, u, f"factor{n}")


def load_layer(fp) -> TuckerConvLayer:
    header = json.loads(fp.readline())
    if header.get("format") != LAYER_FORMAT:
        raise CheckpointError("not a layer checkpoint")
    _, core = read_tensor(fp)
    factors = [read_tensor(fp)[1] for _ in range(header["order"])]
    return TuckerConvLayer(
        TuckerFactors(np.asarray(core), tuple(factors)),
        theta=header["theta"],
        rescale=header["rescale"],
        stride=tuple(header["stride"]),
        padding=tuple(header["padding"]),
    )
