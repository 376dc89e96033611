"""Supporting/opposing context from attention vectors and the DAN/DCN wiring.

The supporting context sums the projections of both exemplar maps onto the
target map; the opposing context sums their rejections. Both formulas are
applied literally over the last axis, so inputs may be ``[R]`` or ``[B, R]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import answer_logits, attend, attention_map
from .encoders import InputError
from .tensor import DimensionError, Tensor

EPS = 1e-12

COMBINE = ("add", "mul")
SCALING = ("v1", "v2")


class SingularityError(ValueError):
    """The target attention vector has (near) zero norm; projections are undefined."""


@dataclass(frozen=True)
class DcnConfig:
    combine: str = "mul"
    scaling: str = "v2"

    def __post_init__(self):
        if self.combine not in COMBINE:
            raise ValueError(f"combine must be one of {COMBINE}")
        if self.scaling not in SCALING:
            raise ValueError(f"scaling must be one of {SCALING}")


def init_dcn(params: dict, cfg: DcnConfig):
    if cfg.scaling == "v2":
        params["dcn.w1"] = Tensor(np.ones(1), requires_grad=True, name="dcn.w1")
        params["dcn.w2"] = Tensor(np.ones(1), requires_grad=True, name="dcn.w2")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _projection_coeffs(s: Tensor, v: Tensor) -> Tensor:
    """``(s . v) / ||s||^2`` per row, after the degeneracy check."""
    nrm2 = T.dot(s, s)
    if np.any(np.sqrt(nrm2.data) <= EPS):
        raise SingularityError("target attention vector has near-zero norm")
    return T.div(T.dot(s, v), nrm2)


def _check(s, sp, sn):
    if not (s.shape == sp.shape == sn.shape):
        raise DimensionError(f"context: shapes differ {s.shape}, {sp.shape}, {sn.shape}")


def projection(v, s) -> Tensor:
    """Vector projection of ``v`` onto ``s`` (row-wise)."""
    s, v = _as_tensor(s), _as_tensor(v)
    return T.mul(T.expand_last(_projection_coeffs(s, v), s.shape[-1]), s)


def rejection(v, s) -> Tensor:
    v = _as_tensor(v)
    return T.sub(v, projection(v, s))


def supporting_context(s, s_pos, s_neg) -> Tensor:
    s, s_pos, s_neg = _as_tensor(s), _as_tensor(s_pos), _as_tensor(s_neg)
    _check(s, s_pos, s_neg)
    return T.add(projection(s_pos, s), projection(s_neg, s))


def opposing_context(s, s_pos, s_neg) -> Tensor:
    s, s_pos, s_neg = _as_tensor(s), _as_tensor(s_pos), _as_tensor(s_neg)
    _check(s, s_pos, s_neg)
    return T.add(rejection(s_pos, s), rejection(s_neg, s))


def dcn_combine(s, r_pos, r_neg, cfg: DcnConfig, params=None) -> tuple[Tensor, Tensor]:
    """``d = s (+|*) tanh(w1 r+ - w2 r-)``; returns ``(d, softmax(d))``.

    ``w1 = w2 = 1`` for v1; v2 reads the learned scalars ``dcn.w1``/``dcn.w2``.
    """
    s, r_pos, r_neg = _as_tensor(s), _as_tensor(r_pos), _as_tensor(r_neg)
    _check(s, r_pos, r_neg)
    if cfg.scaling == "v2":
        w1 = T.broadcast_to(params["dcn.w1"], s.shape)
        w2 = T.broadcast_to(params["dcn.w2"], s.shape)
        diff = T.sub(T.mul(w1, r_pos), T.mul(w2, r_neg))
    else:
        diff = T.sub(r_pos, r_neg)
    gate = T.tanh(diff)
    d = T.add(s, gate) if cfg.combine == "add" else T.mul(s, gate)
    return d, T.softmax(d, axis=-1)


def dan_forward(triple, params):
    """Attention maps for target/supporting/opposing branches with one weight set.

    ``triple`` is ``((grid, text), (grid+, text+), (grid-, text-))``. Answer
    logits come from the target branch only.
    """
    (g, f), (gp, fp), (gn, fn) = triple
    s = attention_map(g, f, params)
    sp = attention_map(gp, fp, params)
    sn = attention_map(gn, fn, params)
    logits = answer_logits(attend(g, s), f, params)
    return s, sp, sn, logits


def dcn_forward(triple, params, cfg: DcnConfig):
    """DAN maps plus the differential context map used for answering."""
    (g, f), (gp, fp), (gn, fn) = triple
    s = attention_map(g, f, params)
    sp = attention_map(gp, fp, params)
    sn = attention_map(gn, fn, params)
    _, p_att = dcn_combine(s, supporting_context(s, sp, sn), opposing_context(s, sp, sn), cfg, params)
    logits = answer_logits(attend(g, p_att), f, params)
    return s, sp, sn, p_att, logits


def quintuplet_forward(five, params):
    """Maps ``(s, p+, p++, n--, n-)`` for target, two supporting, two opposing inputs."""
    five = list(five)
    if len(five) != 5:
        raise InputError(f"quintuplet_forward needs 5 inputs, got {len(five)}")
    maps = [attention_map(g, f, params) for g, f in five]
    g, f = five[0]
    logits = answer_logits(attend(g, maps[0]), f, params)
    return maps, logits
