"""Command-line pipeline: data -> retrieval index -> training -> evaluation and dumps.

All artifacts live under the ``--out`` workspace and relative paths given to
other flags are resolved against it. Exit codes: 0 success, 2 configuration
error, 3 missing prerequisite artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import tensor_io
from .attention import dump_attention
from .config import ConfigError, RunConfig, load_config
from .data import START, STOP, config_hash, generate_synthetic, load_dataset, save_dataset
from .exemplars import load_exemplars, save_exemplars
from .models import ATTENTION_ARCHS, ARCHS, EXEMPLAR_ARCHS, ModelConfig, StateError, generate, init_model, predict_vqa
from .objectives import LossWeights
from .train import (ablate_k, build_exemplars, evaluate, load_checkpoint, save_checkpoint, train,
                    train_retrieval_baseline)

EXIT_CONFIG, EXIT_MISSING = 2, 3
METRICS = ("all", "accuracy", "rank-correlation", "bleu", "rouge-l")


class MissingArtifact(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# workspace helpers


def _path(out: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(out, p)


def _resolve_config(args) -> RunConfig:
    path = args.config
    if path is None and os.path.exists(os.path.join(args.out, "config.json")):
        path = os.path.join(args.out, "config.json")
    cfg = load_config(path)
    return cfg if args.seed is None else cfg.with_seed(args.seed)


def _write_manifest(directory: str, cfg: RunConfig, command: str, **extra):
    os.makedirs(directory, exist_ok=True)
    body = {"command": command, "config_hash": config_hash(cfg.to_json()), "seed": cfg.optim.seed, **extra}
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_sidecar(path: str, cfg: RunConfig, command: str, **extra):
    """``<file>.manifest.json`` next to a single-file artifact."""
    body = {"command": command, "config_hash": config_hash(cfg.to_json()), "seed": cfg.optim.seed,
            "artifact": os.path.basename(path), **extra}
    with open(path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _require(path: str, what: str, hint: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {what} at {path}; run `{hint}` first")
    return path


def _dataset(cfg: RunConfig, out: str):
    root = _path(out, cfg.paths.data)
    _require(os.path.join(root, "samples.jsonl"), "dataset", "exemplarnet gen-data")
    return load_dataset(root)


def _embeddings(cfg: RunConfig, out: str) -> np.ndarray:
    path = os.path.join(_path(out, cfg.paths.index), "embeddings.dxt")
    return tensor_io.load(_require(path, "retrieval embeddings", "exemplarnet build-index"))


def _cache_name(k: int, mode: str, quintuplet: bool) -> str:
    if quintuplet:
        return "exemplars_quint.jsonl"
    return f"exemplars_{'random_' if mode == 'random' else ''}k{k}.jsonl"


def _exemplar_cache(cfg: RunConfig, out: str, ds, k: int, mode: str, quintuplet: bool) -> str:
    """Path of the exemplar cache for ``k``/``mode``, building it from the embeddings when absent."""
    path = os.path.join(_path(out, cfg.paths.index), _cache_name(k, mode, quintuplet))
    if not os.path.exists(path):
        emb = _embeddings(cfg, out)
        sets = build_exemplars(emb, ds, k, cfg.exemplars.num_bins, cfg.exemplars.offset, mode=mode,
                               seed=cfg.optim.seed, quintuplet=quintuplet)
        save_exemplars(path, sets, cfg.exemplars.num_bins, cfg.exemplars.offset)
        _write_sidecar(path, cfg, "build-index", k=k, mode=mode)
    return path


def _model_config(cfg: RunConfig, ds, arch: str, k: int) -> ModelConfig:
    m = cfg.model
    weights = LossWeights(nu=m.nu, gamma=m.gamma, alpha=m.alpha, quint_margins=tuple(m.quint_margins), lam=m.lam)
    return ModelConfig(arch=arch, channels=ds.channels, vocab_size=ds.vocab_size, num_classes=ds.num_classes,
                       grid_dim=m.grid_dim, embed_dim=m.embed_dim, hidden=m.hidden, k=k,
                       dcn_combine=m.dcn_combine, dcn_scaling=m.dcn_scaling, triplet_space=m.triplet_space,
                       weights=weights, seed=cfg.optim.seed)


def _load_run(args):
    """Checkpoint, run config, dataset and exemplar cache for commands that consume a trained model."""
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = _path(args.out, args.checkpoint)
    _require(os.path.join(ckpt, "manifest.json"), "checkpoint", "exemplarnet train")
    model, _, _, manifest = load_checkpoint(ckpt)
    cfg = _resolve_config(args)
    ds = _dataset(cfg, args.out)
    exemplars = None
    if manifest.get("exemplars"):
        exemplars = load_exemplars(_require(_path(args.out, manifest["exemplars"]), "exemplar cache",
                                            "exemplarnet build-index"))
    return ckpt, model, cfg, ds, exemplars


def _split_ids(ds, split: str) -> np.ndarray:
    ids = ds.ids(None if split == "all" else split)
    if len(ids) == 0:
        raise ConfigError(f"split {split!r} is empty")
    return ids


def token_text(tokens) -> str:
    return " ".join(f"w{t}" for t in tokens if t not in (START, STOP))


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    root = _path(args.out, cfg.paths.data)
    ds = generate_synthetic(cfg.data)
    save_dataset(ds, root)
    _write_manifest(root, cfg, "gen-data", size=len(ds))
    print(f"wrote {len(ds)} samples to {root}")
    return 0


def cmd_build_index(args) -> int:
    cfg = _resolve_config(args)
    ds = _dataset(cfg, args.out)
    k = args.k or cfg.exemplars.k
    root = _path(args.out, cfg.paths.index)
    os.makedirs(root, exist_ok=True)
    base, emb = train_retrieval_baseline(ds, cfg.optim, cfg.train.retrieval_steps,
                                         **_retrieval_kwargs(cfg, ds))
    tensor_io.save(os.path.join(root, "embeddings.dxt"), emb)
    for name in os.listdir(root):
        if name.startswith("exemplars_") and name.endswith(".jsonl"):
            os.remove(os.path.join(root, name))  # caches derive from the embeddings just replaced
            if os.path.exists(os.path.join(root, name + ".manifest.json")):
                os.remove(os.path.join(root, name + ".manifest.json"))
    paths = [_exemplar_cache(cfg, args.out, ds, k, "knn", False),
             _exemplar_cache(cfg, args.out, ds, k, "random", False)]
    _write_manifest(root, cfg, "build-index", k=k, retrieval_steps=cfg.train.retrieval_steps,
                    embedding_dim=int(emb.shape[1]), caches=[os.path.basename(p) for p in paths])
    print(f"indexed {len(ds.ids('train'))} training samples ({emb.shape[1]}-d); caches: "
          + ", ".join(os.path.basename(p) for p in paths))
    return 0


def _retrieval_kwargs(cfg: RunConfig, ds) -> dict:
    m = cfg.model
    return dict(channels=ds.channels, vocab_size=ds.vocab_size, num_classes=ds.num_classes,
                grid_dim=m.grid_dim, embed_dim=m.embed_dim, hidden=m.hidden, seed=cfg.optim.seed)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ds = _dataset(cfg, args.out)
    steps = args.steps if args.steps is not None else cfg.train.steps
    if args.checkpoint:
        ckpt = _path(args.out, args.checkpoint)
        _require(os.path.join(ckpt, "manifest.json"), "checkpoint", "exemplarnet train")
        model, opt, rng, manifest = load_checkpoint(ckpt)
        run_dir = os.path.dirname(os.path.normpath(ckpt))
        ex_rel = manifest.get("exemplars")
    else:
        if not args.arch:
            raise ConfigError("--arch is required when not resuming from --checkpoint")
        k = args.k or cfg.exemplars.k
        model = init_model(_model_config(cfg, ds, args.arch, k))
        opt = rng = None
        tag = f"{args.arch}-k{model.cfg.k}" + ("-random" if args.exemplars == "random" else "")
        run_dir = os.path.join(_path(args.out, cfg.paths.runs), tag)
        ckpt = os.path.join(run_dir, "checkpoint")
        ex_rel = None
        if model.cfg.arch in EXEMPLAR_ARCHS:
            path = _exemplar_cache(cfg, args.out, ds, model.cfg.k, args.exemplars, model.cfg.arch == "quint-dan")
            ex_rel = os.path.relpath(path, args.out)
    exemplars = load_exemplars(_path(args.out, ex_rel)) if ex_rel else None
    os.makedirs(run_dir, exist_ok=True)
    opt, rng, reports = train(model, ds, exemplars, cfg.optim, steps, os.path.join(run_dir, "train_log.csv"),
                              opt=opt, rng=rng)
    save_checkpoint(ckpt, model, opt, rng, extra={"exemplars": ex_rel,
                                                  "run_config_hash": config_hash(cfg.to_json())})
    _write_sidecar(os.path.join(run_dir, "train_log.csv"), cfg, "train", arch=model.cfg.arch, steps=steps)
    last = reports[-1] if reports else None
    print(f"{model.cfg.arch}: step {model.step}" + (f", loss {last.total:.4f}" if last else "")
          + f"; checkpoint {ckpt}")
    return 0


def _select(rep: dict, metric: str) -> dict:
    keys = {"accuracy": ["accuracy"], "rank-correlation": ["rank_correlation_gt", "rank_correlation_human"],
            "bleu": ["bleu1", "bleu2", "bleu3", "bleu4"], "rouge-l": ["rouge_l"]}
    if metric == "all":
        return {k: v for k, v in rep.items() if k not in ("per_sample", "n")}
    missing = [k for k in keys[metric] if k not in rep]
    if missing:
        raise ConfigError(f"metric {metric!r} is not available for this model")
    return {k: rep[k] for k in keys[metric]}


def cmd_eval(args) -> int:
    ckpt, model, cfg, ds, exemplars = _load_run(args)
    rep = evaluate(model, ds, _split_ids(ds, args.split), exemplars, threads=args.threads)
    agg = _select(rep, args.metric)
    report = {"metric": args.metric, "aggregate": agg, "n": rep["n"], "split": args.split,
              "arch": model.cfg.arch, "step": model.step, "checkpoint": os.path.relpath(ckpt, args.out),
              "config_hash": config_hash(cfg.to_json()), "per_sample": rep["per_sample"]}
    if args.metric == "rank-correlation":
        report["value"] = agg["rank_correlation_gt"]
    path = os.path.join(os.path.dirname(os.path.normpath(ckpt)), "eval_report.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    width = max(len(k) for k in agg)
    for k, v in agg.items():
        print(f"{k:<{width}}  {v:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    ds = _dataset(cfg, args.out)
    emb = _embeddings(cfg, args.out)
    if not args.arch:
        raise ConfigError("--arch is required")
    ks = [s.strip() for s in (args.k or "1,2,3,4,5,R").split(",") if s.strip()]
    for s in ks:
        if s.upper() != "R" and not (s.isdigit() and int(s) >= 1):
            raise ConfigError(f"bad K value {s!r}; use positive integers or R")
    base = _model_config(cfg, ds, args.arch, 1)
    kw = dict(channels=base.channels, vocab_size=base.vocab_size, num_classes=base.num_classes,
              grid_dim=base.grid_dim, embed_dim=base.embed_dim, hidden=base.hidden, dcn_combine=base.dcn_combine,
              dcn_scaling=base.dcn_scaling, triplet_space=base.triplet_space, weights=base.weights)
    steps = args.steps if args.steps is not None else cfg.train.steps
    rows = ablate_k(args.arch, ds, emb, ks, cfg.optim, steps, cfg.exemplars.num_bins, cfg.exemplars.offset, **kw)
    path = os.path.join(args.out, f"ablate_{args.arch}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"arch": args.arch, "steps": steps, "rows": rows}, fh, indent=1)
        fh.write("\n")
    _write_sidecar(path, cfg, "ablate", arch=args.arch)
    cols = [c for c in ("k", "accuracy", "rank_correlation_gt", "bleu1") if c in rows[0]]
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if c == "k" else f"{r[c]:.4f}" for c in cols])
    return 0


def cmd_dump_attention(args) -> int:
    ckpt, model, cfg, ds, exemplars = _load_run(args)
    if model.cfg.arch not in ATTENTION_ARCHS:
        raise ConfigError(f"{model.cfg.arch} has no attention map")
    if args.sample is None or not 0 <= args.sample < len(ds):
        raise ConfigError(f"--sample must be an id in 0..{len(ds) - 1}")
    _, maps = predict_vqa(model, ds, [args.sample], exemplars)
    prefix = os.path.join(args.out, "attention", f"{model.cfg.arch}_sample{args.sample:06d}")
    dump_attention(maps[0], prefix)
    _write_sidecar(prefix + ".pgm", cfg, "dump-attention", sample=args.sample, checkpoint=os.path.relpath(ckpt, args.out))
    print(f"wrote {prefix}.pgm and {prefix}.csv")
    return 0


def cmd_generate(args) -> int:
    ckpt, model, cfg, ds, _ = _load_run(args)
    ids = _split_ids(ds, args.split)
    seed = cfg.optim.seed if args.seed is None else args.seed
    seqs = generate(model, ds, ids, mode=args.mode, seed=seed, max_len=cfg.decode.max_len,
                    temperature=cfg.decode.temperature, threads=args.threads)
    path = os.path.join(args.out, f"questions_{model.cfg.arch}_{args.mode}.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for i, s in zip(ids, seqs):
            fh.write(json.dumps({"sample_id": int(i), "tokens": s, "text": token_text(s),
                                 "decode_mode": args.mode, "seed": seed if args.mode == "sample" else None}) + "\n")
    _write_sidecar(path, cfg, "generate-questions", checkpoint=os.path.relpath(ckpt, args.out))
    print(f"wrote {len(seqs)} questions to {path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exemplarnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON run config (default: <out>/config.json, else built-in defaults)")
        p.add_argument("--out", required=True, help="workspace directory holding every artifact")
        p.add_argument("--seed", type=int, default=None, help="override the data/optimiser seed")
        p.add_argument("--threads", type=int, default=1, help="sample-level parallelism for encode/eval paths")
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data, "generate the synthetic dataset")
    p = add("build-index", cmd_build_index, "train the retrieval baseline and cache exemplars")
    p.add_argument("--k", type=int, default=None, help="exemplars per side to cache")
    p = add("train", cmd_train, "train one architecture (or resume a checkpoint)")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--k", type=int, default=None, help="exemplars per side")
    p.add_argument("--exemplars", choices=("knn", "random"), default="knn")
    p.add_argument("--steps", type=int, default=None, help="train until this step count")
    p.add_argument("--checkpoint", help="resume from this checkpoint directory")
    p = add("eval", cmd_eval, "evaluate a checkpoint and write eval_report.json")
    p.add_argument("--checkpoint")
    p.add_argument("--metric", choices=METRICS, default="all")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p = add("ablate", cmd_ablate, "sweep the number of exemplars K")
    p.add_argument("--arch", choices=EXEMPLAR_ARCHS)
    p.add_argument("--k", default=None, help="comma-separated K values, R for random (default 1,2,3,4,5,R)")
    p.add_argument("--steps", type=int, default=None)
    p = add("dump-attention", cmd_dump_attention, "write one sample's attention map as PGM and CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--sample", type=int)
    p = add("generate-questions", cmd_generate, "decode questions with a trained generator")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("argmax", "sample"), default="argmax")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (FileNotFoundError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
