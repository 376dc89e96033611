"""Synthetic exemplar-informative datasets and their on-disk layout.

Each sample belongs to an image cluster and a question template. A cluster
owns a signature vector that is painted onto the image grid with a Gaussian
bump centred on the cluster's informative region; every region also carries
i.i.d. noise. The answer is a fixed function of (cluster, template), so
cluster-mates asking the same template share an answer and their nearest
neighbours are genuinely informative.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor_io

PAD, START, STOP = 0, 1, 2
FIRST_WORD = 3


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 32
    num_clusters: int = 5
    samples_per_cluster: int = 200
    sigma: float = 1.0
    vocab_size: int = 64
    max_len: int = 12
    seed: int = 0
    regions: int = 196
    channels: int = 64
    num_templates: int = 4
    signal: float = 10.0
    bump_width: float = 1.5
    num_human_maps: int = 3
    holdout_fraction: float = 0.2

    def __post_init__(self):
        for name in ("num_classes", "num_clusters", "samples_per_cluster", "vocab_size",
                     "max_len", "regions", "channels", "num_templates", "num_human_maps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma < 0 or self.signal < 0 or self.bump_width <= 0:
            raise ValueError("sigma/signal must be >= 0 and bump_width > 0")
        side = math.isqrt(self.regions)
        if side * side != self.regions:
            raise ValueError("regions must be a perfect square (the grid is side x side)")
        if self.num_clusters > self.regions:
            raise ValueError("need at least one region per cluster")
        if self.vocab_size < FIRST_WORD + 8:
            raise ValueError("vocab_size too small for templates")
        if self.max_len < 5:
            raise ValueError("max_len must be at least 5")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")

    @property
    def side(self) -> int:
        return math.isqrt(self.regions)

    @property
    def size(self) -> int:
        return self.num_clusters * self.samples_per_cluster


@dataclass
class Sample:
    id: int
    image_grid: np.ndarray
    tokens: list[int]
    answer_class: int
    target_tokens: list[int]
    cluster: int = -1
    template: int = -1
    split: str = "train"
    attention: np.ndarray | None = None
    human_maps: np.ndarray | None = None


@dataclass
class Dataset:
    """Struct-of-arrays view of a sample collection (ids are row indices)."""

    grids: np.ndarray            # [N, R, D]
    tokens: list[list[int]]
    answers: np.ndarray          # [N]
    targets: list[list[int]]
    clusters: np.ndarray         # [N]
    templates: np.ndarray        # [N]
    splits: np.ndarray           # [N] of "train"/"test"
    attention: np.ndarray        # [N, R] ground-truth attention
    human_maps: np.ndarray       # [N, H, R_fine]
    num_classes: int
    vocab_size: int
    spec: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.answers)

    @property
    def regions(self) -> int:
        return self.grids.shape[1]

    @property
    def channels(self) -> int:
        return self.grids.shape[2]

    def ids(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self))
        return np.flatnonzero(self.splits == split)

    def sample(self, i: int) -> Sample:
        return Sample(
            id=int(i), image_grid=self.grids[i], tokens=list(self.tokens[i]),
            answer_class=int(self.answers[i]), target_tokens=list(self.targets[i]),
            cluster=int(self.clusters[i]), template=int(self.templates[i]),
            split=str(self.splits[i]), attention=self.attention[i], human_maps=self.human_maps[i],
        )

    def subset(self, ids) -> "Dataset":
        ids = np.asarray(ids, dtype=np.int64)
        return Dataset(
            grids=self.grids[ids], tokens=[self.tokens[i] for i in ids], answers=self.answers[ids],
            targets=[self.targets[i] for i in ids], clusters=self.clusters[ids],
            templates=self.templates[ids], splits=self.splits[ids], attention=self.attention[ids],
            human_maps=self.human_maps[ids], num_classes=self.num_classes,
            vocab_size=self.vocab_size, spec=dict(self.spec),
        )


def bump_map(side: int, center: tuple[float, float], width: float, upsample: int = 1) -> np.ndarray:
    """Gaussian bump on a (side*upsample)^2 grid, max value 1, row-major."""
    n = side * upsample
    coords = (np.arange(n) + 0.5) / upsample - 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    d2 = (yy - center[0]) ** 2 + (xx - center[1]) ** 2
    return np.exp(-d2 / (2.0 * width * width)).reshape(-1)


def downscale_map(fine: np.ndarray, side: int) -> np.ndarray:
    """Block-mean pool a square map to ``side x side`` and renormalise to sum 1."""
    fine = np.asarray(fine, dtype=np.float64)
    n = math.isqrt(fine.size)
    if n * n != fine.size or n % side:
        raise ValueError(f"cannot pool a {fine.size}-map onto a {side}x{side} grid")
    f = n // side
    pooled = fine.reshape(side, f, side, f).mean(axis=(1, 3)).reshape(-1)
    return pooled / pooled.sum()


def _sequences(rng, spec: SyntheticSpec):
    words = np.arange(FIRST_WORD, spec.vocab_size)
    templates = []
    for _ in range(spec.num_templates):
        length = int(rng.integers(3, min(6, spec.max_len - 1) + 1))
        templates.append([int(w) for w in rng.choice(words, size=length, replace=False)])
    questions = {}
    for c in range(spec.num_clusters):
        for t in range(spec.num_templates):
            length = int(rng.integers(2, min(6, spec.max_len - 2) + 1))
            body = [int(w) for w in rng.choice(words, size=length, replace=True)]
            questions[(c, t)] = [START] + body + [STOP]
    return words, templates, questions


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic clustered dataset; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    side, R, D = spec.side, spec.regions, spec.channels
    words, templates, questions = _sequences(rng, spec)

    centers = rng.choice(R, size=spec.num_clusters, replace=False)
    sig = rng.standard_normal((spec.num_clusters, D))
    sig *= spec.signal / np.linalg.norm(sig, axis=1, keepdims=True)
    bumps = np.stack([bump_map(side, divmod(int(c), side), spec.bump_width) for c in centers])
    protos = bumps[:, :, None] * sig[:, None, :]                      # [K, R, D]
    fine_bumps = np.stack([bump_map(side, divmod(int(c), side), spec.bump_width, upsample=2)
                           for c in centers])

    N = spec.size
    clusters = np.repeat(np.arange(spec.num_clusters), spec.samples_per_cluster)
    templates_of = rng.integers(0, spec.num_templates, size=N)
    noise = rng.standard_normal((N, R, D))
    grids = protos[clusters] + spec.sigma * noise
    answers = (clusters * spec.num_templates + templates_of) % spec.num_classes

    tokens = []
    for t in templates_of:
        seq = list(templates[int(t)])
        filler = int(rng.choice(words))
        seq.insert(int(rng.integers(0, len(seq) + 1)), filler)
        tokens.append(seq[: spec.max_len])
    targets = [list(questions[(int(c), int(t))]) for c, t in zip(clusters, templates_of)]

    attention = bumps[clusters] / bumps[clusters].sum(axis=1, keepdims=True)
    hm = fine_bumps[clusters][:, None, :] * np.exp(
        0.3 * rng.standard_normal((N, spec.num_human_maps, fine_bumps.shape[1])))
    hm += 1e-3 * rng.random(hm.shape)
    hm /= hm.sum(axis=2, keepdims=True)

    order = rng.permutation(N)
    n_test = int(round(spec.holdout_fraction * N))
    splits = np.array(["train"] * N, dtype=object)
    splits[order[:n_test]] = "test"

    return Dataset(
        grids=grids, tokens=tokens, answers=answers.astype(np.int64), targets=targets,
        clusters=clusters.astype(np.int64), templates=templates_of.astype(np.int64),
        splits=splits, attention=attention, human_maps=hm, num_classes=spec.num_classes,
        vocab_size=spec.vocab_size, spec=dataclasses.asdict(spec),
    )


# ---------------------------------------------------------------------------
# disk layout: samples.jsonl + per-sample DXTNSR01 tensors


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_dataset(ds: Dataset, root: str):
    tdir = os.path.join(root, "tensors")
    os.makedirs(tdir, exist_ok=True)
    with open(os.path.join(root, "samples.jsonl"), "w", encoding="utf-8") as fh:
        for i in range(len(ds)):
            paths = {
                "image_grid": f"tensors/{i:06d}_grid.dxt",
                "attention": f"tensors/{i:06d}_att.dxt",
                "human_maps": f"tensors/{i:06d}_human.dxt",
            }
            tensor_io.save(os.path.join(root, paths["image_grid"]), ds.grids[i])
            tensor_io.save(os.path.join(root, paths["attention"]), ds.attention[i])
            tensor_io.save(os.path.join(root, paths["human_maps"]), ds.human_maps[i])
            rec = {
                "id": i, "tokens": [int(t) for t in ds.tokens[i]],
                "answer_class": int(ds.answers[i]),
                "target_tokens": [int(t) for t in ds.targets[i]],
                "cluster": int(ds.clusters[i]), "template": int(ds.templates[i]),
                "split": str(ds.splits[i]), "paths": paths,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    meta = {"num_classes": ds.num_classes, "vocab_size": ds.vocab_size, "spec": ds.spec,
            "size": len(ds), "config_hash": config_hash(ds.spec)}
    with open(os.path.join(root, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(root: str) -> Dataset:
    """Read a dataset directory; accepts externally produced features in the same layout.

    ``attention`` and ``human_maps`` paths are optional for ingested data; a
    uniform map is substituted when absent.
    """
    with open(os.path.join(root, "dataset.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    recs = []
    with open(os.path.join(root, "samples.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                recs.append(json.loads(line))
    recs.sort(key=lambda r: r["id"])
    if [r["id"] for r in recs] != list(range(len(recs))):
        raise ValueError("sample ids must be 0..N-1")
    grids, att, hms = [], [], []
    for r in recs:
        g = tensor_io.load(os.path.join(root, r["paths"]["image_grid"]))
        if not np.all(np.isfinite(g)):
            raise ValueError(f"sample {r['id']}: non-finite image grid")
        grids.append(g)
        p = r["paths"].get("attention")
        a = tensor_io.load(os.path.join(root, p)) if p else np.full(g.shape[0], 1.0 / g.shape[0])
        att.append(a)
        p = r["paths"].get("human_maps")
        hms.append(tensor_io.load(os.path.join(root, p)) if p else a[None, :])
    C, V = int(meta["num_classes"]), int(meta["vocab_size"])
    for r in recs:
        if not 0 <= r["answer_class"] < C:
            raise ValueError(f"sample {r['id']}: answer_class out of range")
        if any(not 0 <= t < V for t in r["tokens"] + r["target_tokens"]):
            raise ValueError(f"sample {r['id']}: token id out of range")
    return Dataset(
        grids=np.stack(grids), tokens=[r["tokens"] for r in recs],
        answers=np.array([r["answer_class"] for r in recs], dtype=np.int64),
        targets=[r["target_tokens"] for r in recs],
        clusters=np.array([r.get("cluster", -1) for r in recs], dtype=np.int64),
        templates=np.array([r.get("template", -1) for r in recs], dtype=np.int64),
        splits=np.array([r.get("split", "train") for r in recs], dtype=object),
        attention=np.stack(att), human_maps=np.stack(hms), num_classes=C, vocab_size=V,
        spec=meta.get("spec", {}),
    )


def pad_tokens(seqs, pad: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(1, int(lengths.max(initial=1)))), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths
