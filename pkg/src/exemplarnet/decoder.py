"""LSTM question decoder conditioned on a fused context vector.

The context is the input at step -1; afterwards the decoder reads the
(teacher-forced or generated) previous word and predicts the next one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import START, STOP
from .encoders import InputError, glorot, init_lstm, lstm_cell, zeros
from .objectives import sequence_nll
from .tensor import Tensor


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    step: int = -1


def init_decoder(params: dict, rng, vocab: int, embed_dim: int, hidden: int):
    params["dec.emb"] = Tensor(rng.standard_normal((vocab, embed_dim)) * 0.1,
                               requires_grad=True, name="dec.emb")
    init_lstm(params, rng, "dec.lstm", embed_dim, hidden)
    params["dec.W_o"] = glorot(rng, hidden, vocab, "dec.W_o")
    params["dec.b_o"] = zeros((vocab,), "dec.b_o")


def _hidden(params) -> int:
    return params["dec.lstm.W"].shape[1] // 4


def start_state(e: Tensor, params) -> DecoderState:
    """Run the step -1 cell on the context ``e [B, E]``."""
    B, H = e.shape[0], _hidden(params)
    h0, c0 = Tensor(np.zeros((B, H))), Tensor(np.zeros((B, H)))
    h, c = lstm_cell(e, h0, c0, params["dec.lstm.W"], params["dec.lstm.b"])
    return DecoderState(h, c, 0)


def step(state: DecoderState, tokens, params) -> tuple[DecoderState, Tensor]:
    """Feed ``tokens [B]``; return the new state and next-word logits ``[B, V]``."""
    x = T.embedding(params["dec.emb"], tokens)
    h, c = lstm_cell(x, state.h, state.c, params["dec.lstm.W"], params["dec.lstm.b"])
    return DecoderState(h, c, state.step + 1), T.linear(h, params["dec.W_o"], params["dec.b_o"])


def decode_train(e, targets, params, lengths=None):
    """Teacher-forced logits ``[B, L-1, V]`` and the token-averaged NLL.

    ``targets`` is one sequence or a padded ``[B, L]`` batch, each starting
    with START. Every token after START is predicted from its prefix.
    """
    e = e if isinstance(e, Tensor) else Tensor(e)
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.ndim == 1:
        tgt = tgt[None, :]
        e = T.reshape(e, (1,) + e.shape)
    if tgt.shape[1] < 2:
        raise InputError("decode_train: target needs START and at least one token")
    if np.any(tgt[:, 0] != START):
        raise InputError("decode_train: targets must begin with START")
    B, L = tgt.shape
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    state = start_state(e, params)
    outs = []
    for t in range(L - 1):
        state, logits = step(state, tgt[:, t], params)
        outs.append(logits)
    stacked = T.stack(outs, axis=1)
    mask = np.arange(1, L)[None, :] < lengths[:, None]
    return stacked, sequence_nll(stacked, tgt[:, 1:], mask)


def _masked_probs(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = logits.astype(np.float64).copy()
    z[START] = -np.inf
    z = z / temperature
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def next_token_probs(e, prefix, params) -> np.ndarray:
    """Predictive distribution (START masked) after reading ``prefix``."""
    e = e if isinstance(e, Tensor) else Tensor(e)
    state = start_state(T.reshape(e, (1,) + e.shape), params)
    logits = None
    for tok in prefix:
        state, logits = step(state, [tok], params)
    return _masked_probs(logits.data[0])


def _decode(e, params, max_len: int, pick) -> list[int]:
    e = e if isinstance(e, Tensor) else Tensor(e)
    state = start_state(T.reshape(e, (1,) + e.shape), params)
    seq = [START]
    while len(seq) < max_len:
        state, logits = step(state, [seq[-1]], params)
        tok = int(pick(logits.data[0]))
        seq.append(tok)
        if tok == STOP:
            break
    return seq


def decode_argmax(e, params, max_len: int = 12) -> list[int]:
    """Greedy decoding; START is never emitted after position 0."""
    return _decode(e, params, max_len, lambda z: np.argmax(_masked_probs(z)))


def decode_sample(e, params, max_len: int = 12, seed: int = 0, temperature: float = 1.0) -> list[int]:
    """Multinomial decoding; ``temperature == 0`` falls back to argmax."""
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    if temperature == 0:
        return decode_argmax(e, params, max_len)
    rng = np.random.default_rng(seed)
    return _decode(e, params, max_len, lambda z: rng.choice(z.size, p=_masked_probs(z, temperature)))
