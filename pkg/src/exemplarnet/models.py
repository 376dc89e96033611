"""Architecture wiring: parameter sets, batched losses and predictions.

VQA models answer from one target branch; exemplar branches only feed the
metric loss (or the differential context for DCN). VQG models fuse image and
text into a context vector that drives the question decoder.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import answer_logits, attend, attention_map, init_answer_head, init_attention
from .context import DcnConfig, dcn_combine, init_dcn, opposing_context, supporting_context
from .data import Dataset, pad_tokens
from .decoder import decode_argmax, decode_sample, decode_train, init_decoder
from .encoders import encode_image, encode_sequence, init_image_encoder, init_text_encoder
from .fusion import FusionConfig, fuse, init_classifier, init_fusion
from .objectives import LossWeights, joint_objective_t, l2_penalty, nll, quintuplet_hinge, triplet_hinge
from .tensor import Tensor

VQA_ARCHS = ("lqi", "lqia", "dan", "dcn", "djn", "quint-dan")
VQG_ARCHS = ("mdn-joint", "mdn-add", "mdn-hadamard", "mdn-att", "din")
ARCHS = VQA_ARCHS + VQG_ARCHS
EXEMPLAR_ARCHS = ("dan", "dcn", "djn", "quint-dan") + VQG_ARCHS
ATTENTION_ARCHS = ("lqia", "dan", "dcn", "quint-dan")
# what the attention metric loss compares: attended region features or raw maps
TRIPLET_SPACES = ("attended", "map")


class StateError(RuntimeError):
    """An operation needs an artifact or training state that is missing."""


@dataclass
class ModelConfig:
    arch: str = "dan"
    channels: int = 64
    vocab_size: int = 64
    num_classes: int = 32
    grid_dim: int = 64
    embed_dim: int = 128
    hidden: int = 128
    k: int = 1
    dcn_combine: str = "mul"
    dcn_scaling: str = "v2"
    triplet_space: str = "attended"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        if isinstance(self.weights, dict):
            w = dict(self.weights)
            if "quint_margins" in w:
                w["quint_margins"] = tuple(w["quint_margins"])
            self.weights = LossWeights(**w)
        if self.triplet_space not in TRIPLET_SPACES:
            raise ValueError(f"triplet_space must be one of {TRIPLET_SPACES}")
        if self.arch == "quint-dan":
            self.k = 2
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def dcn(self) -> DcnConfig:
        return DcnConfig(self.dcn_combine, self.dcn_scaling)

    @property
    def fusion(self) -> FusionConfig:
        kind = {"mdn-add": "add", "mdn-hadamard": "hadamard", "mdn-att": "attention"}.get(self.arch, "joint")
        return FusionConfig(kind, self.embed_dim)

    @property
    def task(self) -> str:
        return "vqg" if self.arch in VQG_ARCHS else "vqa"

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"]["quint_margins"] = list(d["weights"]["quint_margins"])
        return d


@dataclass
class Model:
    cfg: ModelConfig
    params: dict
    step: int = 0


def init_model(cfg: ModelConfig) -> Model:
    rng = np.random.default_rng(cfg.seed)
    p: dict = {}
    E, Dh = cfg.embed_dim, cfg.grid_dim
    pooled = cfg.arch not in ATTENTION_ARCHS and cfg.arch != "mdn-att"
    init_image_encoder(p, rng, cfg.channels, Dh, E if pooled else None)
    init_text_encoder(p, rng, cfg.vocab_size, E)
    if cfg.arch in ATTENTION_ARCHS:
        init_attention(p, rng, Dh, E)
        init_answer_head(p, rng, Dh, E, cfg.num_classes)
        if cfg.arch == "dcn":
            init_dcn(p, cfg.dcn)
    elif cfg.arch in ("lqi", "djn"):
        init_fusion(p, rng, cfg.fusion, E, E)
        init_classifier(p, rng, E, cfg.num_classes)
    else:
        init_fusion(p, rng, cfg.fusion, Dh if cfg.arch == "mdn-att" else E, E)
        init_decoder(p, rng, cfg.vocab_size, E, cfg.hidden)
    return Model(cfg, p)


# ---------------------------------------------------------------------------
# batch plumbing


def _text(ds: Dataset, ids, params) -> Tensor:
    toks, lens = pad_tokens([ds.tokens[i] for i in ids])
    return encode_sequence(toks, params, lens)


def _repeat_rows(x: Tensor, k: int) -> Tensor:
    """``[B, ...] -> [B*k, ...]`` with each row repeated ``k`` times."""
    B, rest = x.shape[0], x.shape[1:]
    y = T.broadcast_to(T.reshape(x, (B, 1) + rest), (B, k) + rest)
    return T.reshape(y, (B * k,) + rest)


def _mean_k(x: Tensor, B: int, k: int) -> Tensor:
    return T.mean(T.reshape(x, (B, k) + x.shape[1:]), axis=1)


def exemplar_ids(exemplars: dict | None, ids, k: int) -> tuple[np.ndarray, np.ndarray]:
    """``[B, k]`` supporting and opposing id arrays for the batch targets."""
    if exemplars is None:
        raise StateError("this architecture needs an exemplar cache")
    sup, opp = [], []
    for i in ids:
        es = exemplars.get(int(i))
        if es is None:
            raise StateError(f"no exemplars cached for sample {int(i)}")
        if len(es.supporting) < k or len(es.opposing) < k:
            raise StateError(f"exemplar set for {int(i)} has fewer than {k} per side")
        sup.append([j for j, _ in es.supporting[:k]])
        opp.append([j for j, _ in es.opposing[:k]])
    return np.asarray(sup, dtype=np.int64), np.asarray(opp, dtype=np.int64)


def _vqa_head(model: Model, ds: Dataset, ids, exemplars, need_metric: bool):
    """Target logits, the answering attention map (or None) and per-sample metric loss."""
    cfg, p = model.cfg, model.params
    B, K = len(ids), cfg.k
    f = _text(ds, ids, p)
    h, g = encode_image(Tensor(ds.grids[ids]), p)
    metric = None
    if cfg.arch in ("lqi", "djn"):
        e = fuse(g, f, cfg.fusion, p)
        logits = T.linear(e, p["out.W"], p["out.b"])
        if cfg.arch == "djn" and need_metric:
            sup, opp = exemplar_ids(exemplars, ids, K)
            es = []
            for side in (sup, opp):
                flat = side.reshape(-1)
                _, gs = encode_image(Tensor(ds.grids[flat]), p)
                es.append(fuse(gs, _text(ds, flat, p), cfg.fusion, p))
            metric = _mean_k(triplet_hinge(_repeat_rows(e, K), es[0], es[1], cfg.weights.alpha), B, K)
        return logits, None, metric

    s = attention_map(h, f, p)
    att = s
    if cfg.arch in ("dan", "dcn", "quint-dan") and (need_metric or cfg.arch == "dcn"):
        sup, opp = exemplar_ids(exemplars, ids, K)
        f_rep = _repeat_rows(f, K)
        maps, feats = [], []
        for side in (sup, opp):
            hs, _ = encode_image(Tensor(ds.grids[side.reshape(-1)]), p)
            m = attention_map(hs, f_rep, p)
            maps.append(m)
            feats.append(attend(hs, m) if cfg.triplet_space == "attended" else m)
        sp, sn = maps
        anchor = attend(h, s) if cfg.triplet_space == "attended" else s
        tp, tn = feats
        if cfg.arch == "dcn":
            spm, snm = _mean_k(sp, B, K), _mean_k(sn, B, K)
            _, att = dcn_combine(s, supporting_context(s, spm, snm), opposing_context(s, spm, snm), cfg.dcn, p)
        if need_metric:
            if cfg.arch == "quint-dan":
                tp2 = T.reshape(tp, (B, 2, tp.shape[-1]))
                tn2 = T.reshape(tn, (B, 2, tn.shape[-1]))
                five = [anchor, tp2[:, 0], tp2[:, 1], tn2[:, 0], tn2[:, 1]]
                reg = T.scale(l2_penalty(p), cfg.weights.lam)
                metric = T.add(quintuplet_hinge(five, cfg.weights.quint_margins), T.broadcast_to(reg, (B,)))
            else:
                metric = _mean_k(triplet_hinge(_repeat_rows(anchor, K), tp, tn, cfg.weights.alpha), B, K)
    logits = answer_logits(attend(h, att), f, p)
    return logits, att, metric


def _vqg_context(model: Model, ds: Dataset, ids) -> tuple[Tensor, Tensor]:
    """Fused context ``[B, E]`` and the pooled image vector used by DIN."""
    cfg, p = model.cfg, model.params
    h, g = encode_image(Tensor(ds.grids[ids]), p)
    f = _text(ds, ids, p)
    return fuse(h if cfg.fusion.kind == "attention" else g, f, cfg.fusion, p), g


def batch_loss(model: Model, ds: Dataset, ids, exemplars=None) -> tuple[Tensor, float, float]:
    """Scalar joint loss plus its classification and metric parts (batch means)."""
    cfg, p = model.cfg, model.params
    ids = np.asarray(ids, dtype=np.int64)
    B, K = len(ids), cfg.k
    if cfg.task == "vqa":
        w = cfg.weights.nu
        logits, _, metric = _vqa_head(model, ds, ids, exemplars, need_metric=cfg.arch in EXEMPLAR_ARCHS)
        cls = nll(logits, ds.answers[ids], prefactor=1.0 / cfg.num_classes)
        total = joint_objective_t(cls, metric, w)
        return total, float(cls.data.mean()), 0.0 if metric is None else float(metric.data.mean())

    w = cfg.weights.gamma
    e, g = _vqg_context(model, ds, ids)
    toks, lens = pad_tokens([ds.targets[i] for i in ids])
    _, seq = decode_train(e, toks, p, lens)
    sup, opp = exemplar_ids(exemplars, ids, K)
    ex = []
    for side in (sup, opp):
        flat = side.reshape(-1)
        if cfg.arch == "din":
            _, gs = encode_image(Tensor(ds.grids[flat]), p)
            ex.append(gs)
        else:
            ex.append(_vqg_context(model, ds, flat)[0])
    anchor = g if cfg.arch == "din" else e
    metric = _mean_k(triplet_hinge(_repeat_rows(anchor, K), ex[0], ex[1], cfg.weights.alpha), B, K)
    total = T.add(seq, T.scale(T.mean(metric), w))
    return total, float(seq.data), float(metric.data.mean())


# ---------------------------------------------------------------------------
# inference


def _chunks(ids, size: int = 128):
    ids = np.asarray(ids, dtype=np.int64)
    for i in range(0, len(ids), size):
        yield ids[i:i + size]


def _map_chunks(fn, ids, threads: int = 1, size: int = 128) -> list:
    """``fn`` over id chunks, in order; chunks are independent so threads only change speed."""
    chunks = list(_chunks(ids, size))
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def predict_vqa(model: Model, ds: Dataset, ids, exemplars=None,
                threads: int = 1) -> tuple[np.ndarray, np.ndarray | None]:
    """Predicted answer classes and the answering attention maps (None without attention)."""
    if model.cfg.task != "vqa":
        raise StateError(f"{model.cfg.arch} is a question-generation model")

    def run(chunk):
        logits, att, _ = _vqa_head(model, ds, chunk, exemplars, need_metric=False)
        return np.argmax(logits.data, axis=-1), None if att is None else att.data

    parts = _map_chunks(run, ids, threads)
    answers = np.concatenate([a for a, _ in parts])
    maps = [m for _, m in parts if m is not None]
    return answers, (np.concatenate(maps) if maps else None)


def generate(model: Model, ds: Dataset, ids, mode: str = "argmax", seed: int = 0,
             max_len: int | None = None, temperature: float = 1.0, threads: int = 1) -> list[list[int]]:
    """Decoded token sequences; sampling seeds each sample with ``seed + id``."""
    if model.cfg.task != "vqg":
        raise StateError(f"{model.cfg.arch} does not generate questions")
    if mode not in ("argmax", "sample"):
        raise ValueError("mode must be 'argmax' or 'sample'")
    max_len = max_len or int(ds.spec.get("max_len", 12))

    def run(chunk):
        e, _ = _vqg_context(model, ds, chunk)
        if mode == "argmax":
            return [decode_argmax(e.data[r], model.params, max_len) for r in range(len(chunk))]
        return [decode_sample(e.data[r], model.params, max_len, seed=seed + int(i), temperature=temperature)
                for r, i in enumerate(chunk)]

    return [seq for part in _map_chunks(run, ids, threads, size=16) for seq in part]


def joint_embed(model: Model, ds: Dataset, ids) -> np.ndarray:
    """Penultimate fused representation of a trained exemplar-free baseline."""
    if model.cfg.arch not in ("lqi", "djn"):
        raise StateError("joint embeddings come from an lqi/djn model")
    if model.step <= 0:
        raise StateError("the retrieval baseline has not been trained")
    p, cfg = model.params, model.cfg
    rows = []
    for chunk in _chunks(ids):
        _, g = encode_image(Tensor(ds.grids[chunk]), p)
        rows.append(fuse(g, _text(ds, chunk, p), cfg.fusion, p).data)
    return np.concatenate(rows)
