"""Mixture modules fusing image and text embeddings into one context vector.

``joint`` concatenates the projected image vector with the projected text
vector; ``add`` and ``hadamard`` combine equal-width projections; ``attention``
attends over the region grid with the text vector and adds the text back.
The result is ``tanh(W_o . + b_o)`` of width E in every case.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .attention import attend, attention_map, init_attention
from .encoders import glorot, zeros
from .tensor import DimensionError, Tensor

KINDS = ("joint", "add", "hadamard", "attention")


@dataclass(frozen=True)
class FusionConfig:
    kind: str = "joint"
    dim: int = 128

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"fusion kind must be one of {KINDS}")
        if self.dim < 1:
            raise ValueError("fusion dim must be positive")


def init_fusion(params: dict, rng, cfg: FusionConfig, image_dim: int, text_dim: int, prefix: str = "fus"):
    E = cfg.dim
    if cfg.kind == "attention":
        init_attention(params, rng, image_dim, text_dim, prefix=f"{prefix}.att")
        if image_dim != text_dim:
            params[f"{prefix}.W_V"] = glorot(rng, image_dim, text_dim, f"{prefix}.W_V")
        params[f"{prefix}.W_o"] = glorot(rng, text_dim, E, f"{prefix}.W_o")
    else:
        params[f"{prefix}.W_ig"] = glorot(rng, image_dim, E, f"{prefix}.W_ig")
        params[f"{prefix}.W_cf"] = glorot(rng, text_dim, E, f"{prefix}.W_cf")
        params[f"{prefix}.b_f"] = zeros((E,), f"{prefix}.b_f")
        width = 2 * E if cfg.kind == "joint" else E
        params[f"{prefix}.W_o"] = glorot(rng, width, E, f"{prefix}.W_o")
    params[f"{prefix}.b_o"] = zeros((E,), f"{prefix}.b_o")


def fuse(g, f, cfg: FusionConfig, params, prefix: str = "fus") -> Tensor:
    """Context vector ``[.., E]``.

    ``g`` is the pooled image vector ``[.., Dg]`` for joint/add/hadamard and
    the region grid ``[.., R, Dh]`` for attention fusion.
    """
    g = g if isinstance(g, Tensor) else Tensor(g)
    f = f if isinstance(f, Tensor) else Tensor(f)
    if cfg.kind == "attention":
        if g.ndim != f.ndim + 1:
            raise DimensionError(f"attention fusion needs a grid, got {g.shape} with text {f.shape}")
        alpha = attention_map(g, f, params, prefix=f"{prefix}.att")
        v = attend(g, alpha)
        if f"{prefix}.W_V" in params:
            v = T.matmul(v, params[f"{prefix}.W_V"])
        mixed = T.add(v, f)
    else:
        if g.shape[:-1] != f.shape[:-1]:
            raise DimensionError(f"fuse: batch shapes differ {g.shape} vs {f.shape}")
        gp = T.matmul(g, params[f"{prefix}.W_ig"])
        fp = T.linear(f, params[f"{prefix}.W_cf"], params[f"{prefix}.b_f"])
        if cfg.kind == "joint":
            mixed = T.tanh(T.concat([gp, fp], axis=-1))
        elif cfg.kind == "add":
            mixed = T.tanh(T.add(gp, fp))
        else:
            mixed = T.tanh(T.mul(gp, fp))
    return T.tanh(T.linear(mixed, params[f"{prefix}.W_o"], params[f"{prefix}.b_o"]))


def triplet_fusion(triple, cfg: FusionConfig, params, prefix: str = "fus"):
    """Context vectors for target, supporting and opposing inputs (one weight set)."""
    return tuple(fuse(g, f, cfg, params, prefix) for g, f in triple)


def init_classifier(params: dict, rng, dim: int, num_classes: int):
    params["out.W"] = glorot(rng, dim, num_classes, "out.W")
    params["out.b"] = zeros((num_classes,), "out.b")


def djn_forward(g, f, params, cfg: FusionConfig | None = None) -> Tensor:
    """Joint-fusion context followed by a linear classifier over C answers."""
    cfg = cfg or FusionConfig("joint", params["fus.b_o"].shape[0])
    e = fuse(g, f, cfg, params)
    return T.linear(e, params["out.W"], params["out.b"])
