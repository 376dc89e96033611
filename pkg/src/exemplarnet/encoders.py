"""Image-grid and token-sequence encoders (the CNN/LSTM stand-ins)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class InputError(ValueError):
    pass


def glorot(rng, fan_in: int, fan_out: int, name: str) -> Tensor:
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(w, requires_grad=True, name=name)


def zeros(shape, name: str, value: float = 0.0) -> Tensor:
    return Tensor(np.full(shape, value), requires_grad=True, name=name)


def init_image_encoder(params: dict, rng, channels: int, grid_dim: int, embed_dim: int | None):
    """Region projection, plus the pooled projection unless ``embed_dim`` is None."""
    params["img.W"] = glorot(rng, channels, grid_dim, "img.W")
    params["img.b"] = zeros((grid_dim,), "img.b")
    if embed_dim is None:
        return
    params["img.Wp"] = glorot(rng, grid_dim, embed_dim, "img.Wp")
    params["img.bp"] = zeros((embed_dim,), "img.bp")


def init_lstm(params: dict, rng, prefix: str, input_dim: int, hidden: int):
    params[f"{prefix}.W"] = glorot(rng, input_dim + hidden, 4 * hidden, f"{prefix}.W")
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    params[f"{prefix}.b"] = Tensor(b, requires_grad=True, name=f"{prefix}.b")


def init_text_encoder(params: dict, rng, vocab: int, embed_dim: int):
    params["txt.emb"] = Tensor(rng.standard_normal((vocab, embed_dim)) * 0.1,
                               requires_grad=True, name="txt.emb")
    init_lstm(params, rng, "txt.lstm", embed_dim, embed_dim)


def encode_image(grid, params) -> tuple[Tensor, Tensor | None]:
    """Per-region ``tanh(grid @ W + b)`` and its region-mean projected to E.

    ``grid`` is ``[R, D]`` or batched ``[B, R, D]``; outputs follow the same
    batching: ``([.., R, Dh], [.., E])``. Pooled is None when the model has
    no pooled projection.
    """
    g = grid if isinstance(grid, Tensor) else Tensor(grid)
    h = T.tanh(T.linear(g, params["img.W"], params["img.b"]))
    if "img.Wp" not in params:
        return h, None
    pooled = T.linear(T.mean(h, axis=-2), params["img.Wp"], params["img.bp"])
    return h, pooled


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor):
    """One step of a standard LSTM cell with gate order (i, f, g, o)."""
    n = h.shape[-1]
    z = T.linear(T.concat([x, h], axis=-1), w, b)
    i = T.sigmoid(z[..., 0:n])
    f = T.sigmoid(z[..., n:2 * n])
    g = T.tanh(z[..., 2 * n:3 * n])
    o = T.sigmoid(z[..., 3 * n:4 * n])
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def encode_sequence(tokens, params, lengths=None) -> Tensor:
    """Final hidden state of the question/caption LSTM.

    ``tokens`` is a list of ids (returns ``[E]``) or a padded ``[B, L]`` array
    with per-row ``lengths`` (returns ``[B, E]``).
    """
    arr = np.asarray(tokens, dtype=np.int64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] == 0:
        raise InputError("encode_sequence: empty token sequence")
    lengths = np.full(arr.shape[0], arr.shape[1]) if lengths is None else np.asarray(lengths)
    if lengths.min() < 1:
        raise InputError("encode_sequence: empty token sequence")
    emb, w, b = params["txt.emb"], params["txt.lstm.W"], params["txt.lstm.b"]
    B, H = arr.shape[0], w.shape[1] // 4
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    ragged = bool(np.any(lengths != lengths.max()))
    for t in range(int(lengths.max())):
        x = T.embedding(emb, arr[:, t])
        h_new, c_new = lstm_cell(x, h, c, w, b)
        if ragged:
            m = Tensor(np.repeat((t < lengths)[:, None].astype(float), H, axis=1))
            keep = Tensor(1.0 - m.data)
            h_new = T.add(T.mul(h_new, m), T.mul(h, keep))
            c_new = T.add(T.mul(c_new, m), T.mul(c, keep))
        h, c = h_new, c_new
    return h[0] if single else h
