"""Training loop, checkpoints, evaluation and the exemplar-count ablation."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor_io
from .data import STOP, Dataset, START, config_hash
from .exemplars import ExemplarSet, KdIndex, exemplar_set_for, quintuplet_exemplars, random_exemplars
from .metrics import bleu_n, multi_map_rank_correlation, rank_correlation, rouge_l, vqa_accuracy
from .models import (EXEMPLAR_ARCHS, Model, ModelConfig, StateError, batch_loss, generate, init_model,
                     joint_embed, predict_vqa)
from .optim import OptimConfig, RMSProp, lr_decay

LOG_FIELDS = ("step", "total", "class", "metric", "lr")


@dataclass
class StepReport:
    step: int
    total: float
    classification: float
    metric: float
    lr: float

    def row(self) -> list[str]:
        return [str(self.step), repr(self.total), repr(self.classification), repr(self.metric), repr(self.lr)]


def make_optimizer(cfg: OptimConfig) -> RMSProp:
    # one configuration for every weight; the triplet settings stay in the config only
    return RMSProp(cfg.lr_class, cfg.alpha_class, cfg.epsilon)


def train_step(model: Model, opt: RMSProp, ds: Dataset, ids, exemplars, lr: float):
    """One forward/backward/update; returns the losses and the raw gradients."""
    for p in model.params.values():
        p.grad = None
    total, c, m = batch_loss(model, ds, ids, exemplars)
    total.backward()
    grads = {n: p.grad for n, p in model.params.items()}
    opt.step(model.params, grads, lr)
    model.step += 1
    return float(total.data), c, m, grads


def train(model: Model, ds: Dataset, exemplars, cfg: OptimConfig, steps: int, log_path: str | None = None,
          opt: RMSProp | None = None, rng: np.random.Generator | None = None):
    """Run until ``model.step == steps``; returns ``(opt, rng, reports)``.

    Passing the ``opt``/``rng`` restored from a checkpoint continues a run
    exactly; the log is appended to in that case.
    """
    if model.cfg.arch in EXEMPLAR_ARCHS and exemplars is None:
        raise StateError(f"{model.cfg.arch} needs an exemplar cache")
    opt = opt or make_optimizer(cfg)
    rng = rng or np.random.default_rng(cfg.seed)
    train_ids = ds.ids("train")
    n = len(train_ids)
    if n == 0:
        raise StateError("dataset has no training samples")
    batch = min(cfg.batch, n)
    reports = []
    fh = writer = None
    if log_path:
        fresh = model.step == 0 or not os.path.exists(log_path)
        fh = open(log_path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_FIELDS)
    try:
        while model.step < steps:
            epoch = model.step * batch // n
            lr = cfg.lr_class * lr_decay(epoch, cfg)
            ids = rng.choice(train_ids, size=batch, replace=False)
            step = model.step
            total, c, m, _ = train_step(model, opt, ds, ids, exemplars, lr)
            rep = StepReport(step, total, c, m, lr)
            reports.append(rep)
            if writer:
                writer.writerow(rep.row())
    finally:
        if fh:
            fh.close()
    return opt, rng, reports


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, model: Model, opt: RMSProp, rng: np.random.Generator, extra: dict | None = None):
    os.makedirs(os.path.join(path, "params"), exist_ok=True)
    os.makedirs(os.path.join(path, "optim"), exist_ok=True)
    for name, p in model.params.items():
        tensor_io.save(os.path.join(path, "params", name + ".dxt"), p.data)
    for name, v in opt.v.items():
        tensor_io.save(os.path.join(path, "optim", name + ".dxt"), v)
    cfg = model.cfg.to_json()
    manifest = {
        "step": model.step, "model_config": cfg, "config_hash": config_hash(cfg),
        "params": sorted(model.params), "optim": sorted(opt.v),
        "optimizer": {"lr": opt.lr, "alpha": opt.alpha, "eps": opt.eps},
        "rng_state": rng.bit_generator.state,
    }
    manifest.update(extra or {})
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(path: str):
    """Returns ``(model, opt, rng, manifest)``."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no checkpoint manifest at {mpath}")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    model = init_model(ModelConfig(**manifest["model_config"]))
    for name in manifest["params"]:
        model.params[name].data = tensor_io.load(os.path.join(path, "params", name + ".dxt"))
    model.step = int(manifest["step"])
    o = manifest["optimizer"]
    opt = RMSProp(o["lr"], o["alpha"], o["eps"])
    for name in manifest["optim"]:
        opt.v[name] = tensor_io.load(os.path.join(path, "optim", name + ".dxt"))
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng_state"]
    return model, opt, rng, manifest


# ---------------------------------------------------------------------------
# exemplar caches


def build_exemplars(embeddings: np.ndarray, ds: Dataset, k: int = 1, num_bins: int = 50, offset: int = 20,
                    mode: str = "knn", seed: int = 0, quintuplet: bool = False) -> dict:
    """Exemplar sets for every sample, drawn from the training split.

    ``mode`` is ``knn`` (nearest + far-bin) or ``random``. With
    ``quintuplet`` each set holds bins (0, 1) as supporting and (18, 19) as
    opposing, following a 20-bin split of the nearest 2000 points.
    """
    train_ids = ds.ids("train")
    out = {}
    if mode == "random":
        for i in ds.ids():
            out[int(i)] = random_exemplars(train_ids, int(i), k, seed, embeddings)
        return out
    if mode != "knn":
        raise ValueError("mode must be 'knn' or 'random'")
    index = KdIndex(embeddings[train_ids], train_ids)
    for i in ds.ids():
        if quintuplet:
            q = quintuplet_exemplars(index, int(i), x=embeddings[i])
            out[int(i)] = ExemplarSet(int(i), q[:2], q[2:], 2)
        else:
            out[int(i)] = exemplar_set_for(index, int(i), embeddings[i], k, num_bins, offset)
    return out


def train_retrieval_baseline(ds: Dataset, cfg: OptimConfig, steps: int, **model_kw) -> tuple[Model, np.ndarray]:
    """Train the exemplar-free joint-fusion model and embed every sample with it."""
    model = init_model(ModelConfig(arch="lqi", **model_kw))
    train(model, ds, None, cfg, steps)
    return model, joint_embed(model, ds, ds.ids())


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: Model, ds: Dataset, ids, exemplars=None, threads: int = 1) -> dict:
    """Aggregate metrics plus a per-sample list; VQA gains rank correlations when it attends."""
    ids = np.asarray(ids, dtype=np.int64)
    if model.cfg.task == "vqa":
        answers, maps = predict_vqa(model, ds, ids, exemplars, threads)
        anns = [[str(ds.answers[i])] * 10 for i in ids]
        rep = {"accuracy": vqa_accuracy([str(a) for a in answers], anns), "n": int(len(ids))}
        if maps is not None:
            gt = [rank_correlation(m, ds.attention[i]) for m, i in zip(maps, ids)]
            hu = [multi_map_rank_correlation(m, ds.human_maps[i]).mean for m, i in zip(maps, ids)]
            rep["rank_correlation_gt"] = float(np.mean(gt))
            rep["rank_correlation_human"] = float(np.mean(hu))
            rep["per_sample"] = [{"id": int(i), "answer": int(a), "rc_gt": r}
                                 for i, a, r in zip(ids, answers, gt)]
        else:
            rep["per_sample"] = [{"id": int(i), "answer": int(a)} for i, a in zip(ids, answers)]
        return rep
    seqs = generate(model, ds, ids, threads=threads)
    strip = lambda s: [t for t in s if t not in (START, STOP)]  # noqa: E731
    per = []
    for i, s in zip(ids, seqs):
        cand, ref = strip(s), [strip(ds.targets[i])]
        per.append({"id": int(i), "tokens": s, "exact": s == list(ds.targets[i]),
                    **{f"bleu{n}": bleu_n(cand, ref, n) if cand else 0.0 for n in (1, 2, 3, 4)},
                    "rouge_l": rouge_l(cand, ref) if cand else 0.0})
    rep = {k: float(np.mean([p[k] for p in per])) for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l")}
    rep["exact_match"] = float(np.mean([p["exact"] for p in per]))
    rep["n"] = int(len(ids))
    rep["per_sample"] = per
    return rep


def ablate_k(arch: str, ds: Dataset, embeddings: np.ndarray, ks, cfg: OptimConfig, steps: int,
             num_bins: int = 50, offset: int = 20, **model_kw) -> list[dict]:
    """One row per K (ints, or ``"R"`` for one random exemplar per side)."""
    rows = []
    test = ds.ids("test")
    for k in ks:
        random_k = str(k).upper() == "R"
        kk = 1 if random_k else int(k)
        ex = build_exemplars(embeddings, ds, kk, num_bins, offset, mode="random" if random_k else "knn",
                             seed=cfg.seed)
        model = init_model(ModelConfig(arch=arch, k=kk, seed=cfg.seed, **model_kw))
        train(model, ds, ex, cfg, steps)
        rep = evaluate(model, ds, test, ex)
        row = {"k": "R" if random_k else kk}
        for key in ("accuracy", "rank_correlation_gt", "bleu1"):
            if key in rep:
                row[key] = rep[key]
        rows.append(row)
    return rows


def gradient_touch(grads: dict) -> dict:
    """Which parameters received any nonzero gradient entry."""
    return {n: bool(g is not None and np.any(g != 0)) for n, g in grads.items()}

