"""Independent reference implementations shared by the test modules."""

import itertools

import numpy as np

from deftensor import autodiff as ad

H = 1e-6
N_POINTS = 50


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def check_gradients(build, inputs, seed=0, n_points=N_POINTS):
    """Compare reverse-mode gradients of ``build`` with central differences.

    ``build(tape, vars)`` returns a Var; the scalar checked is the mean of
    that output weighted by a fixed random tensor, so every output entry
    contributes. ``n_points`` random coordinates are probed across all inputs.
    """
    rng = np.random.default_rng(seed)
    weights = {}

    def scalar(values, with_grad):
        tape = ad.Tape()
        vs = [tape.leaf(v, requires_grad=with_grad) for v in values]
        out = build(tape, vs)
        if "r" not in weights:
            weights["r"] = rng.standard_normal(out.shape)
        loss = ad.mean(ad.mul(out, weights["r"]))
        return loss, tape, vs

    loss, tape, vs = scalar(inputs, True)
    tape.backward(loss)
    grads = [np.zeros_like(v.value) if v.grad is None else v.grad for v in vs]
    sizes = [x.size for x in inputs]
    worst = 0.0
    for _ in range(n_points):
        k = rng.choice(len(inputs), p=np.array(sizes) / sum(sizes))
        j = rng.integers(inputs[k].size)
        plus = [x.copy() for x in inputs]
        minus = [x.copy() for x in inputs]
        plus[k].flat[j] += H
        minus[k].flat[j] -= H
        fd = (float(scalar(plus, False)[0].value) - float(scalar(minus, False)[0].value)) / (2 * H)
        worst = max(worst, rel_err(grads[k].flat[j], fd))
    assert worst < 1e-4, worst
    return worst


def away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x) + margin * (x == 0), x)


def loop_mode_product(t, m, mode):
    """Index-by-index contraction: out[..., i, ...] = sum_k m[i, k] t[..., k, ...]."""
    out_shape = list(t.shape)
    out_shape[mode] = m.shape[0]
    out = np.zeros(out_shape)
    for idx in itertools.product(*map(range, out_shape)):
        total = 0.0
        for k in range(t.shape[mode]):
            src = list(idx)
            src[mode] = k
            total += m[idx[mode], k] * t[tuple(src)]
        out[idx] = total
    return out


def k_oracle(i, kh, kw, stride, padding):
    c, h, w = i.shape
    a = np.zeros((h + 2 * padding, w + 2 * padding))
    a[padding : padding + h, padding : padding + w] = np.abs(i).mean(axis=0)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    k = np.zeros((1, ho, wo))
    for y in range(ho):
        for x in range(wo):
            total = 0.0
            for dy in range(kh):
                for dx in range(kw):
                    total += a[y * stride + dy, x * stride + dx]
            k[0, y, x] = total / (kh * kw)
    return k
