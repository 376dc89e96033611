"""Losses: triplet and quintuplet hinges, cross-entropy, and the joint objectives.

Plain-numpy versions return ``(value, grads)`` so the closed-form gradients
can be certified directly. The ``*_t`` variants build tape nodes for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

MODES = ("vqa", "vqg")


@dataclass(frozen=True)
class LossWeights:
    nu: float = 10.0                      # VQA: class + nu * triplet
    gamma: float = 10.0                   # VQG: class + gamma * triplet
    alpha: float = 0.2
    quint_margins: tuple = (0.006, 0.2, 0.006)
    lam: float = 1e-4

    def __post_init__(self):
        vals = (self.nu, self.gamma, self.alpha, self.lam) + tuple(self.quint_margins)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights and margins must be non-negative")
        if len(self.quint_margins) != 3:
            raise ValueError("quint_margins needs three values")


@dataclass
class LossReport:
    total: float
    classification: float
    metric: float
    active: list = field(default_factory=list)


def _same(*xs):
    shapes = {np.shape(x) for x in xs}
    if len(shapes) != 1:
        raise DimensionError(f"loss inputs must share a shape, got {sorted(shapes)}")


# ---------------------------------------------------------------------------
# triplet


def triplet_loss(f, fp, fn, alpha: float = 0.2):
    """Hinge ``max(0, |f-f+|^2 + alpha - |f-f-|^2)`` with its closed-form gradients.

    Returns ``(value, (df, dfp, dfn))``. The hinge counts as active at exactly 0.
    """
    f, fp, fn = (np.asarray(x, dtype=np.float64) for x in (f, fp, fn))
    _same(f, fp, fn)
    z = np.sum((f - fp) ** 2) + alpha - np.sum((f - fn) ** 2)
    if z < 0:
        zero = np.zeros_like(f)
        return 0.0, (zero, zero.copy(), zero.copy())
    return float(z), (2.0 * (fn - fp), -2.0 * (f - fp), 2.0 * (f - fn))


def triplet_hinge(f: Tensor, fp: Tensor, fn: Tensor, alpha: float = 0.2) -> Tensor:
    """Row-wise triplet hinge as a tape node; backward uses the closed forms."""
    _same(f.data, fp.data, fn.data)
    a, p, n = f.data, fp.data, fn.data
    z = np.sum((a - p) ** 2, axis=-1) + alpha - np.sum((a - n) ** 2, axis=-1)
    active = (z >= 0.0).astype(np.float64)
    out = z * active

    def backward(g):
        w = (g * active)[..., None]
        return w * 2.0 * (n - p), w * -2.0 * (a - p), w * 2.0 * (a - n)

    return T._make(out, (f, fp, fn), backward)


# ---------------------------------------------------------------------------
# quintuplet


def quintuplet_terms(a, p1, p2, n2, n1, margins=(0.006, 0.2, 0.006)):
    """The three slacks: ``D(a,p+) vs D(a,p++)``, ``D(a,p++) vs D(a,n--)``, ``D(a,n--) vs D(a,n-)``."""
    a, p1, p2, n2, n1 = (np.asarray(x, dtype=np.float64) for x in (a, p1, p2, n2, n1))
    _same(a, p1, p2, n2, n1)
    d = [np.sum((a - x) ** 2) for x in (p1, p2, n2, n1)]
    return [max(0.0, m + d[i] - d[i + 1]) for i, m in enumerate(margins)]


def quintuplet_loss(a, p1, p2, n2, n1, margins=(0.006, 0.2, 0.006), lam: float = 1e-4,
                    theta_norm2: float = 0.0) -> float:
    return float(sum(quintuplet_terms(a, p1, p2, n2, n1, margins)) + lam * theta_norm2)


def quintuplet_hinge(maps, margins=(0.006, 0.2, 0.006)) -> Tensor:
    """Tape version of the three slacks, summed per row (no regulariser)."""
    a, rest = maps[0], maps[1:]
    if len(rest) != 4:
        raise ValueError("quintuplet_hinge needs five maps")
    d = [T.euclid_dist(a, x) for x in rest]
    terms = [T.hinge(T.add_scalar(T.sub(d[i], d[i + 1]), m)) for i, m in enumerate(margins)]
    return T.add(T.add(terms[0], terms[1]), terms[2])


def l2_penalty(params: dict) -> Tensor:
    total = None
    for p in params.values():
        t = T.sum(T.square(p))
        total = t if total is None else T.add(total, t)
    return total


# ---------------------------------------------------------------------------
# cross-entropy


def cross_entropy(logits, label: int, prefactor: float = 1.0):
    """``prefactor * -log softmax(logits)[label]`` and its gradient.

    The VQA objective uses ``prefactor = 1/C``.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise IndexError(f"label {label} out of range for {z.shape[-1]} classes")
    z = z - z.max()
    p = np.exp(z) / np.exp(z).sum()
    value = -(z[label] - np.log(np.exp(z).sum()))
    grad = p.copy()
    grad[label] -= 1.0
    return prefactor * float(value), prefactor * grad


def nll(logits: Tensor, labels, prefactor: float = 1.0) -> Tensor:
    """Per-row NLL ``[B]`` of ``labels`` under ``softmax(logits)``, scaled by ``prefactor``."""
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise IndexError(f"labels out of range for {C} classes")
    lp = T.log_softmax(logits, axis=-1)
    rows = np.arange(labels.shape[0])
    picked = T.getitem(lp, (rows, labels))
    return T.scale(picked, -prefactor)


def sequence_nll(step_logits: Tensor, targets, mask) -> Tensor:
    """Token-averaged NLL over a ``[B, L, V]`` stack of logits; ``mask`` marks real tokens."""
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    B, L, V = step_logits.shape
    lp = T.log_softmax(step_logits, axis=-1)
    bi, ti = np.meshgrid(np.arange(B), np.arange(L), indexing="ij")
    picked = T.getitem(lp, (bi, ti, targets))
    n = mask.sum()
    if n == 0:
        raise ValueError("sequence_nll: no target tokens")
    return T.scale(T.sum(T.mul(picked, Tensor(mask))), -1.0 / n)


# ---------------------------------------------------------------------------
# joint objective


def joint_objective(class_losses, metric_losses, weights: LossWeights, mode: str = "vqa") -> LossReport:
    """Batch mean of ``class + w * metric`` with ``w = nu`` (vqa) or ``gamma`` (vqg)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    c = np.asarray(class_losses, dtype=np.float64)
    m = np.asarray(metric_losses, dtype=np.float64)
    _same(c, m)
    w = weights.nu if mode == "vqa" else weights.gamma
    return LossReport(total=float(np.mean(c + w * m)), classification=float(c.mean()),
                      metric=float(m.mean()), active=(m > 0).tolist())


def joint_objective_t(class_losses: Tensor, metric_losses: Tensor | None, weight: float) -> Tensor:
    """Tape version: ``mean(class + weight * metric)``."""
    total = class_losses if metric_losses is None else T.add(class_losses, T.scale(metric_losses, weight))
    return T.mean(total)
