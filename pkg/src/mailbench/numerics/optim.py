"""Adam updates and global gradient-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .params import ParameterStore


class NonFiniteGradientError(RuntimeError):
    """Raised before any parameter is touched when a gradient is NaN/inf."""

    def __init__(self, param_name: str, detail: str = ""):
        self.param_name = param_name
        msg = f"non-finite gradient in parameter {param_name!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update over every parameter; zeroes gradients after.

    Aborts (raising ``NonFiniteGradientError``) without mutating anything if
    any gradient contains NaN or inf.
    """
    for name, p in store.params.items():
        # g.g is non-finite iff g has a NaN/inf entry (no overflow at any
        # plausible gradient magnitude), and is much cheaper than isfinite.
        sq = float(np.dot(p.grad.ravel(), p.grad.ravel()))
        if not math.isfinite(sq):
            bad = int(np.count_nonzero(~np.isfinite(p.grad)))
            raise NonFiniteGradientError(name, f"{bad} non-finite entries")

    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad
        m = store.adam_m[name]
        v = store.adam_v[name]
        tmp = store.scratch(name)
        m *= beta1
        np.multiply(g, 1.0 - beta1, out=tmp)
        m += tmp
        v *= beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - beta2
        v += tmp
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        p.data -= tmp
        g[...] = 0.0


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm.  ``grads`` is any iterable of arrays (or a
    ParameterStore, whose gradient slots are clipped).
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    if isinstance(grads, ParameterStore):
        arrays = list(grads.gradients().values())
    else:
        arrays = list(grads)
    total = 0.0
    for g in arrays:
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in arrays:
            g *= scale
    return norm
