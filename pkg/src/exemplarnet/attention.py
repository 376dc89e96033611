"""Question-conditioned attention over image regions and the answer head."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import glorot, zeros
from .tensor import DimensionError, Tensor


@dataclass
class AttentionMap:
    probs: np.ndarray
    sample_id: int = -1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("attention map must be non-negative and sum to 1")


def init_attention(params: dict, rng, grid_dim: int, text_dim: int, prefix: str = "att"):
    params[f"{prefix}.W_I"] = glorot(rng, grid_dim, grid_dim, f"{prefix}.W_I")
    params[f"{prefix}.W_Q"] = glorot(rng, text_dim, grid_dim, f"{prefix}.W_Q")
    params[f"{prefix}.b_q"] = zeros((grid_dim,), f"{prefix}.b_q")
    params[f"{prefix}.W_P"] = glorot(rng, grid_dim, 1, f"{prefix}.W_P")
    params[f"{prefix}.b_P"] = zeros((1,), f"{prefix}.b_P")


def init_answer_head(params: dict, rng, grid_dim: int, text_dim: int, num_classes: int):
    if grid_dim != text_dim:
        params["cls.W_V"] = glorot(rng, grid_dim, text_dim, "cls.W_V")
    params["cls.W_A"] = glorot(rng, text_dim, num_classes, "cls.W_A")
    params["cls.b_A"] = zeros((num_classes,), "cls.b_A")


def attention_logits(grid: Tensor, text: Tensor, params, prefix: str = "att") -> Tensor:
    if grid.ndim == 2:
        return attention_logits(T.reshape(grid, (1,) + grid.shape),
                                T.reshape(text, (1,) + text.shape), params, prefix)[0]
    B, R, Dh = grid.shape
    w_i = params[f"{prefix}.W_I"]
    if w_i.shape[0] != Dh or text.shape != (B, params[f"{prefix}.W_Q"].shape[0]):
        raise DimensionError(f"attention_map: grid {grid.shape} / text {text.shape} do not fit params")
    q = T.linear(text, params[f"{prefix}.W_Q"], params[f"{prefix}.b_q"])         # [B, Dh]
    q = T.broadcast_to(T.reshape(q, (B, 1, Dh)), (B, R, Dh))                   # clone(f_i)
    h = T.tanh(T.add(T.matmul(grid, w_i), q))
    logits = T.linear(h, params[f"{prefix}.W_P"], params[f"{prefix}.b_P"])      # [B, R, 1]
    return T.reshape(logits, (B, R))


def attention_map(grid, text, params, prefix: str = "att") -> Tensor:
    """Softmax over regions of ``W_P tanh(W_I g_r + W_Q f + b_q) + b_P``.

    Accepts ``grid [R, Dh]`` with ``text [E]`` or batched ``[B, R, Dh]`` / ``[B, E]``.
    """
    grid = grid if isinstance(grid, Tensor) else Tensor(grid)
    text = text if isinstance(text, Tensor) else Tensor(text)
    return T.softmax(attention_logits(grid, text, params, prefix), axis=-1)


def attend(grid, probs) -> Tensor:
    """Probability-weighted sum of region features."""
    grid = grid if isinstance(grid, Tensor) else Tensor(grid)
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    if grid.shape[:-1] != probs.shape:
        raise DimensionError(f"attend: map {probs.shape} does not cover grid {grid.shape}")
    w = T.expand_last(probs, grid.shape[-1])
    return T.sum(T.mul(grid, w), axis=-2)


def answer_logits(attended, text, params) -> Tensor:
    """``W_A (V_att + f) + b_A``; the attended vector is projected first if widths differ."""
    v = attended if isinstance(attended, Tensor) else Tensor(attended)
    f = text if isinstance(text, Tensor) else Tensor(text)
    if "cls.W_V" in params:
        v = T.matmul(v, params["cls.W_V"])
    return T.linear(T.add(v, f), params["cls.W_A"], params["cls.b_A"])


# ---------------------------------------------------------------------------
# visualisation artifacts


def map_to_pgm(probs) -> bytes:
    """8-bit binary PGM of a square map, max-normalised to 255."""
    p = np.asarray(probs, dtype=np.float64)
    side = math.isqrt(p.size)
    if side * side != p.size:
        raise DimensionError(f"cannot reshape a {p.size}-region map into a square")
    top = p.max()
    pix = np.zeros(p.size, dtype=np.uint8) if top <= 0 else np.rint(p / top * 255.0).astype(np.uint8)
    return f"P5\n{side} {side}\n255\n".encode("ascii") + pix.tobytes()


def read_pgm(blob: bytes) -> np.ndarray:
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError("only 8-bit PGM supported")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def dump_attention(probs, path_prefix: str):
    """Write ``<prefix>.pgm`` and ``<prefix>.csv`` (region, row, col, prob)."""
    p = np.asarray(probs, dtype=np.float64)
    os.makedirs(os.path.dirname(os.path.abspath(path_prefix)), exist_ok=True)
    with open(path_prefix + ".pgm", "wb") as fh:
        fh.write(map_to_pgm(p))
    side = math.isqrt(p.size)
    with open(path_prefix + ".csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "row", "col", "prob"])
        for r, v in enumerate(p):
            w.writerow([r, r // side, r % side, repr(float(v))])
