"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .params import ParameterStore


@dataclass
class FdSample:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class FdReport:
    max_rel_error: float
    samples: list[FdSample] = field(default_factory=list)

    @property
    def worst(self) -> FdSample | None:
        if not self.samples:
            return None
        return max(self.samples, key=lambda s: s.rel_error)


def fd_gradient_check(loss_fn, store: ParameterStore, samples: int,
                      fd_step: float = 1e-5,
                      rng: np.random.Generator | None = None) -> FdReport:
    """Compare tape gradients against central finite differences.

    ``loss_fn(tape)`` must return a scalar Node, be deterministic given fixed
    parameters, and accept ``tape=None`` for value-only evaluation.  For each
    of ``samples`` randomly chosen parameter entries, the tape gradient is
    compared to (L(theta+h) - L(theta-h)) / 2h.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    store.zero_grads()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in store.params.items()}

    entries = []
    for name, p in store.params.items():
        for idx in range(p.data.size):
            entries.append((name, idx))
    if not entries:
        return FdReport(max_rel_error=0.0)
    chosen = rng.choice(len(entries), size=min(samples, len(entries)), replace=False)

    report = FdReport(max_rel_error=0.0)
    for k in np.sort(chosen):
        name, idx = entries[int(k)]
        flat = store.params[name].data.ravel()
        orig = flat[idx]
        flat[idx] = orig + fd_step
        plus = float(loss_fn(None).data)
        flat[idx] = orig - fd_step
        minus = float(loss_fn(None).data)
        flat[idx] = orig
        numeric = (plus - minus) / (2.0 * fd_step)
        a = float(analytic[name].ravel()[idx])
        denom = max(abs(a), abs(numeric), 1e-8)
        rel = abs(a - numeric) / denom
        report.samples.append(FdSample(name, idx, a, numeric, rel))
        report.max_rel_error = max(report.max_rel_error, rel)

    store.zero_grads()
    return report
