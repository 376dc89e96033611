"""Central finite-difference checks against the tape's analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f(x) / dx by central differences; ``f`` maps an array to a float."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(loss_fn, params: dict[str, Tensor], h: float = 1e-6):
    """Compare analytic and numeric gradients of ``loss_fn()`` for each param.

    Returns ``{name: (max_abs_err, max_rel_err)}`` where the relative error is
    ``|a - n| / max(1, |a|, |n|)`` elementwise.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    report = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

        def f(values, p=p):
            saved = p.data
            p.data = values
            try:
                return float(loss_fn().data)
            finally:
                p.data = saved

        numeric = numeric_grad(f, p.data, h)
        diff = np.abs(analytic - numeric)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        report[name] = (float(diff.max(initial=0.0)), float((diff / denom).max(initial=0.0)))
    return report
