"""Desk-scale datasets: seeded synthetic images/signals and IDX files."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Raised for unreadable or inconsistent dataset sources."""


@dataclass(frozen=True)
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def take(self, n: int) -> "Split":
        if n <= 0 or n >= len(self):
            return self
        return Split(self.x[:n], self.y[:n])


@dataclass(frozen=True)
class DatasetSource:
    """Where examples come from.

    ``kind`` is ``"synthetic-images"``, ``"synthetic-1d"`` or ``"idx"``.
    """

    kind: str = "synthetic-images"
    num_classes: int = 4
    size: int = 8
    channels: int = 3
    n_examples: int = 2000
    seed: int = 0
    noise: float = 0.1
    texture: float = 0.0
    images_path: str = ""
    labels_path: str = ""
    fractions: tuple = (0.8, 0.1, 0.1)


# ---------------------------------------------------------------------------
# synthetic generators


def synthetic_images(num_classes=4, size=8, channels=3, n=2000, seed=0, noise=0.1, texture=0.0):
    """Gaussian-blob class templates on a structured-noise background.

    Each class owns a blob at its own position with its own channel colour.
    Every example adds a random low-frequency background (a smooth ramp and
    a random blob of no class meaning) plus i.i.d. pixel noise, then clips to
    ``[0, 1]``. With ``texture > 0`` each class also carries a faint fixed
    +-1 pixel pattern of that amplitude: a predictive but fragile cue.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centers = 0.5 + 0.28 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    colors = 0.5 + 0.5 * rng.random((num_classes, channels))

    def blob(cy, cx, width):
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))

    templates = np.stack(
        [colors[k][:, None, None] * blob(*centers[k], 0.16) for k in range(num_classes)]
    )
    patterns = rng.choice([-1.0, 1.0], size=(num_classes, channels, size, size))
    y = rng.integers(0, num_classes, size=n)
    x = np.empty((n, channels, size, size))
    for i in range(n):
        ramp = rng.uniform(-0.15, 0.15, 2)
        background = 0.3 + ramp[0] * (yy - 0.5) + ramp[1] * (xx - 0.5)
        distractor = rng.uniform(0.0, 0.25) * blob(*rng.random(2), 0.2)
        amplitude = rng.uniform(0.5, 0.8)
        x[i] = (
            background
            + distractor
            + amplitude * templates[y[i]]
            + texture * patterns[y[i]]
            + noise * rng.standard_normal((channels, size, size))
        )
    return np.clip(x, 0.0, 1.0), y


def synthetic_signals(num_classes=12, length=16000, n=240, seed=0, noise=0.1):
    """Audio-shaped ``(1, 1, length)`` signals in ``[-1, 1]``: one tone per class."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    freqs = 5.0 * (1 + np.arange(num_classes))
    y = rng.integers(0, num_classes, size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    x = 0.5 * np.sin(2 * np.pi * freqs[y][:, None] * t + phase[:, None])
    x += noise * rng.standard_normal((n, length))
    return np.clip(x, -1.0, 1.0)[:, None, None, :], y


# ---------------------------------------------------------------------------
# IDX files

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fp:
            raw = fp.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad IDX magic")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise DataError(f"{path}: unknown IDX data type 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_TYPES[code]
    count = int(np.prod(dims))
    if len(raw) - header != count * dtype.itemsize:
        raise DataError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    codes = {v.kind + str(v.itemsize): k for k, v in _IDX_TYPES.items()}
    code = codes[array.dtype.kind + str(array.dtype.itemsize)]
    with open(path, "wb") as fp:
        fp.write(bytes([0, 0, code, array.ndim]))
        fp.write(struct.pack(f">{array.ndim}I", *array.shape))
        fp.write(array.astype(_IDX_TYPES[code]).tobytes())


def load_idx_pair(images_path, labels_path, num_classes):
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.ndim not in (3, 4):
        raise DataError("IDX images must be (N, rows, cols) or (N, C, rows, cols)")
    if labels.ndim != 1 or len(labels) != len(images):
        raise DataError("IDX labels must be a vector matching the image count")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"labels outside [0, {num_classes})")
    x = images.astype(np.float64)
    if images.dtype.kind == "u":
        x /= 255.0
    if x.ndim == 3:
        x = x[:, None]
    return x, labels


# ---------------------------------------------------------------------------


def split_sizes(n: int, fractions) -> tuple:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return n_train, n_val, n - n_train - n_val


def load_dataset(source: DatasetSource) -> tuple:
    """Return ``(train, val, test)`` splits; deterministic for a fixed source."""
    if source.kind == "synthetic-images":
        x, y = synthetic_images(
            source.num_classes, source.size, source.channels, source.n_examples, source.seed, source.noise,
            source.texture,
        )
    elif source.kind == "synthetic-1d":
        x, y = synthetic_signals(source.num_classes, source.size, source.n_examples, source.seed, source.noise)
    elif source.kind == "idx":
        x, y = load_idx_pair(source.images_path, source.labels_path, source.num_classes)
    else:
        raise DataError(f"unknown dataset kind {source.kind!r}")
    if np.any(y < 0) or np.any(y >= source.num_classes):
        raise DataError("label out of range")
    order = np.random.default_rng(source.seed).permutation(len(y))
    x, y = x[order], y[order]
    n_train, n_val, _ = split_sizes(len(y), source.fractions)
    cut = (n_train, n_train + n_val)
    return (
        Split(x[: cut[0]], y[: cut[0]]),
        Split(x[cut[0] : cut[1]], y[cut[0] : cut[1]]),
        Split(x[cut[1] :], y[cut[1] :]),
    )
