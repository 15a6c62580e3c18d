"""Dense tensor algebra: unfolding, n-mode products and Tucker decomposition.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Factor matrices
follow the ``(dimension, rank)`` convention, so that a tensor is rebuilt from
its Tucker form as ``core x_0 U_0 x_1 U_1 ... x_N U_N``.

Unfolding convention
--------------------
``unfold(t, n)`` moves mode ``n`` to the front and reshapes the result in
row-major (C) order. Column ``j`` of the unfolding therefore enumerates the
remaining modes in their original order with the last mode varying fastest.
``fold`` is the exact inverse of that reshape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

__all__ = [
    "TuckerFactors",
    "as_tensor",
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "tucker_decompose",
    "tucker_reconstruct",
    "relative_error",
    "default_ranks",
    "write_tensor",
    "read_tensor",
]


def as_tensor(data) -> np.ndarray:
    """Return ``data`` as a float64 array (copying only when needed)."""
    return np.asarray(data, dtype=np.float64)


def _check_mode(mode: int, order: int) -> int:
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for an order-{order} tensor")
    return mode


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization of ``t``, shape ``(t.shape[mode], -1)``."""
    t = as_tensor(t)
    _check_mode(mode, t.ndim)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(m, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold` for the given mode and target shape."""
    m = as_tensor(m)
    shape = tuple(int(s) for s in shape)
    _check_mode(mode, len(shape))
    rest = [s for i, s in enumerate(shape) if i != mode]
    if m.ndim != 2 or m.shape[0] != shape[mode] or m.shape[1] != int(np.prod(rest)):
        raise ValueError(
            f"cannot fold a matrix of shape {m.shape} into {shape} along mode {mode}"
        )
    return np.moveaxis(m.reshape([shape[mode]] + rest), 0, mode)


def mode_product(t, m, mode: int) -> np.ndarray:
    """n-mode product ``t x_mode m``.

    ``T'[..., i, ...] = sum_k m[i, k] * t[..., k, ...]``; ``m`` must have as
    many columns as ``t`` has entries along ``mode``.
    """
    t = as_tensor(t)
    m = as_tensor(m)
    _check_mode(mode, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix of shape {m.shape} does not match mode {mode} of size {t.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(m, t, axes=(1, mode)), 0, mode)


def multi_mode_product(t, products) -> np.ndarray:
    """Apply a sequence of ``(matrix, mode)`` products; modes must be distinct."""
    products = list(products)
    modes = [mode for _, mode in products]
    if len(set(modes)) != len(modes):
        raise ValueError(f"repeated mode in {modes}")
    out = as_tensor(t)
    for m, mode in products:
        out = mode_product(out, m, mode)
    return out


@dataclass(frozen=True)
class TuckerFactors:
    """Core tensor plus one ``(dim, rank)`` factor matrix per mode."""

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        core = as_tensor(self.core)
        factors = tuple(as_tensor(u) for u in self.factors)
        if len(factors) != core.ndim:
            raise ValueError(f"{len(factors)} factors for an order-{core.ndim} core")
        for n, u in enumerate(factors):
            if u.ndim != 2 or u.shape[1] != core.shape[n]:
                raise ValueError(
                    f"factor {n} has shape {u.shape}, expected (*, {core.shape[n]})"
                )
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    @property
    def shape(self) -> tuple:
        return tuple(u.shape[0] for u in self.factors)


def default_ranks(shape: Sequence[int]) -> tuple:
    """Half of each mode dimension, rounded up."""
    return tuple(max(1, -(-int(s) // 2)) for s in shape)


def _validate_ranks(shape, ranks) -> tuple:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise ValueError(f"got {len(ranks)} ranks for an order-{len(shape)} tensor")
    for n, (r, s) in enumerate(zip(ranks, shape)):
        if not 1 <= r <= s:
            raise ValueError(f"rank {r} invalid for mode {n} of size {s}")
    return ranks


def _leading_left_singular_vectors(m: np.ndarray, rank: int) -> np.ndarray:
    try:
        u, _, _ = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"SVD failed during Tucker decomposition: {exc}")
    if u.shape[1] < rank:
        # wide-but-short unfoldings give fewer singular vectors than rows only
        # when rank exceeds the column count; complete the basis with QR
        extra = np.linalg.qr(np.hstack([u, np.eye(m.shape[0])]))[0]
        u = extra
    u = u[:, :rank]
    # fix the sign ambiguity so results are reproducible across LAPACK builds
    signs = np.sign(u[np.argmax(np.abs(u), axis=0), np.arange(rank)])
    signs[signs == 0] = 1.0
    return u * signs


def _project(t, factors, skip=None):
    out = t
    for n, u in enumerate(factors):
        if n != skip:
            out = mode_product(out, u.T, n)
    return out


def tucker_decompose(
    t,
    ranks,
    *,
    n_iter_max: int = 100,
    tol: float = 1e-10,
    init: str = "hosvd",
    random_state=None,
    return_errors: bool = False,
):
    """Tucker decomposition by HOSVD initialization and HOOI refinement.

    Parameters
    ----------
    t : array_like
        Tensor to decompose.
    ranks : sequence of int
        Target rank per mode, ``1 <= ranks[n] <= t.shape[n]``.
    n_iter_max : int
        Maximum number of HOOI sweeps. ``0`` returns the plain HOSVD.
    tol : float
        Stop when the relative reconstruction error changes by less than this.
    init : {"hosvd", "random"}
        Initial factors: truncated SVD of each unfolding, or random orthonormal.
    random_state : int or numpy.random.Generator, optional
        Only used by ``init="random"``.
    return_errors : bool
        Also return the relative error after initialization and each sweep.

    Returns
    -------
    TuckerFactors, or ``(TuckerFactors, errors)`` if ``return_errors``.
    """
    t = as_tensor(t)
    ranks = _validate_ranks(t.shape, ranks)
    norm = np.linalg.norm(t)

    if init == "hosvd":
        factors = [
            _leading_left_singular_vectors(unfold(t, n), r) for n, r in enumerate(ranks)
        ]
    elif init == "random":
        rng = np.random.default_rng(random_state)
        factors = [
            np.linalg.qr(rng.standard_normal((s, r)))[0] for s, r in zip(t.shape, ranks)
        ]
    else:
        raise ValueError(f"unknown init {init!r}")

    def error_of(core):
        # factors are orthonormal, so ||t - rec||^2 = ||t||^2 - ||core||^2
        if norm == 0:
            return 0.0
        resid = max(norm**2 - np.linalg.norm(core) ** 2, 0.0)
        return float(np.sqrt(resid) / norm)

    core = _project(t, factors)
    errors = [error_of(core)]
    for _ in range(n_iter_max):
        for n, r in enumerate(ranks):
            y = _project(t, factors, skip=n)
            factors[n] = _leading_left_singular_vectors(unfold(y, n), r)
        core = _project(t, factors)
        errors.append(error_of(core))
        if abs(errors[-2] - errors[-1]) < tol:
            break

    result = TuckerFactors(core, tuple(factors))
    if return_errors:
        return result, errors
    return result


def tucker_reconstruct(f: TuckerFactors) -> np.ndarray:
    """Full tensor ``core x_0 U_0 x_1 U_1 ...``."""
    return multi_mode_product(f.core, [(u, n) for n, u in enumerate(f.factors)])


def relative_error(a, b) -> float:
    """``||a - b||_F / ||a||_F``.

    When ``a`` is all zeros the denominator is dropped and ``||b||_F`` is
    returned, so two zero tensors give 0.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    denom = np.linalg.norm(a)
    if denom == 0:
        return float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / denom)


# Serialization: one JSON header line, then the raw little-endian float64 data.


def write_tensor(fp: BinaryIO, t, name: str = "") -> None:
    t = as_tensor(t)
    header = {"order": t.ndim, "shape": list(t.shape), "name": name}
    fp.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    fp.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_tensor(fp: BinaryIO) -> tuple:
    """Read one tensor written by :func:`write_tensor`; returns ``(name, array)``."""
    line = fp.readline()
    if not line:
        raise EOFError("no tensor header")
    try:
        header = json.loads(line.decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"malformed tensor header: {line[:80]!r}") from exc
    if header.get("order", len(shape)) != len(shape):
        raise ValueError(f"header order {header['order']} disagrees with shape {shape}")
    count = int(np.prod(shape))
    payload = fp.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError(f"truncated payload for tensor {header.get('name')!r}")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return header.get("name", ""), data
