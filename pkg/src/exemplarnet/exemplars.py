"""Exact k-d tree search and supporting/opposing exemplar selection.

All orderings are by (distance, id), so results are reproducible and equal to
a sorted linear scan. Distances reported are Euclidean (not squared).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from .encoders import InputError


def sq_dists(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Squared distances from every row of ``points`` to ``x``; shared by tree and scan."""
    d = points - x
    return np.einsum("ij,ij->i", d, d)


class KdIndex:
    """Balanced median-split tree with one point per node, cycling the widest axis."""

    def __init__(self, points, ids=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2:
            raise InputError(f"KdIndex needs a 2-D point array, got shape {pts.shape}")
        if pts.shape[0] < 2:
            raise InputError("KdIndex needs at least 2 points")
        self.points = pts
        self.ids = np.arange(len(pts)) if ids is None else np.asarray(ids, dtype=np.int64)
        if len(self.ids) != len(pts) or len(set(self.ids.tolist())) != len(pts):
            raise InputError("ids must be unique and match the number of points")
        self._row = {int(i): r for r, i in enumerate(self.ids)}
        n = len(pts)
        self.left = np.full(n, -1)
        self.right = np.full(n, -1)
        self.axis = np.zeros(n, dtype=np.int64)
        self.root = self._build(np.arange(n))

    def _build(self, rows: np.ndarray) -> int:
        # iterative to stay clear of recursion limits on large sets
        root = -1
        stack = [(rows, None, None)]
        while stack:
            rows, parent, side = stack.pop()
            if rows.size == 0:
                continue
            sub = self.points[rows]
            ax = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
            order = rows[np.lexsort((self.ids[rows], sub[:, ax]))]
            mid = len(order) // 2
            node = int(order[mid])
            self.axis[node] = ax
            if parent is None:
                root = node
            elif side == 0:
                self.left[parent] = node
            else:
                self.right[parent] = node
            stack.append((order[:mid], node, 0))
            stack.append((order[mid + 1:], node, 1))
        return root

    def __len__(self):
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def point(self, id_: int) -> np.ndarray:
        if int(id_) not in self._row:
            raise KeyError(f"id {id_} not in index")
        return self.points[self._row[int(id_)]]

    def query(self, x, k: int, exclude=()) -> list[tuple[int, float]]:
        """``k`` nearest points to ``x`` as ``(id, distance)``, skipping ``exclude``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise InputError(f"query vector has shape {x.shape}, index dim is {self.dim}")
        excl = {int(e) for e in exclude}
        if k < 1 or k > len(self) - len(excl & set(self._row)):
            raise InputError(f"k={k} out of range")
        heap: list[tuple[float, int]] = []  # max-heap on (d2, id) via negation
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, tuple):
                # deferred far branch: prune when the plane is strictly beyond the worst kept
                far, gap2 = node
                if len(heap) == k and gap2 > -heap[0][0]:
                    continue
                stack.append(far)
                continue
            nid = int(self.ids[node])
            if nid not in excl:
                d2 = float(sq_dists(self.points[node:node + 1], x)[0])
                item = (-d2, -nid)
                if len(heap) < k:
                    heapq.heappush(heap, item)
                elif item > heap[0]:
                    heapq.heapreplace(heap, item)
            ax = self.axis[node]
            diff = x[ax] - self.points[node, ax]
            near, far = (self.left[node], self.right[node]) if diff < 0 else (self.right[node], self.left[node])
            if far >= 0:
                stack.append((int(far), diff * diff))
            if near >= 0:
                stack.append(int(near))
        out = sorted((-d2, -nid) for d2, nid in heap)
        return [(nid, float(np.sqrt(d2))) for d2, nid in out]

    def ranked(self, x, exclude=()) -> list[tuple[int, float]]:
        """Every point in (distance, id) order; the linear-scan path."""
        excl = np.isin(self.ids, list(exclude)) if len(exclude) else np.zeros(len(self), bool)
        d2 = sq_dists(self.points, np.asarray(x, dtype=np.float64))
        keep = np.flatnonzero(~excl)
        order = keep[np.lexsort((self.ids[keep], d2[keep]))]
        return [(int(self.ids[r]), float(np.sqrt(d2[r]))) for r in order]


def build(embeddings, ids=None) -> KdIndex:
    return KdIndex(embeddings, ids)


def linear_scan(points, x, k: int, exclude=()) -> list[tuple[int, float]]:
    return KdIndex(points).ranked(x, exclude)[:k]


@dataclass
class ExemplarSet:
    target_id: int
    supporting: list = field(default_factory=list)
    opposing: list = field(default_factory=list)
    k: int = 1

    def __post_init__(self):
        ids = [i for i, _ in self.supporting] + [i for i, _ in self.opposing]
        if self.target_id in ids:
            raise ValueError("an exemplar equals its own target")
        if len(self.supporting) != self.k or len(self.opposing) != self.k:
            raise ValueError("supporting/opposing lists must have length k")

    def is_ordered(self) -> bool:
        """Whether every supporting distance is <= every opposing distance."""
        return max(d for _, d in self.supporting) <= min(d for _, d in self.opposing)

    def to_json(self, bins: int | None = None, offset: int | None = None) -> dict:
        return {"target_id": int(self.target_id), "k": self.k, "bins": bins, "offset": offset,
                "supporting": [[int(i), d] for i, d in self.supporting],
                "opposing": [[int(i), d] for i, d in self.opposing]}

    @classmethod
    def from_json(cls, obj: dict) -> "ExemplarSet":
        return cls(int(obj["target_id"]), [(int(i), float(d)) for i, d in obj["supporting"]],
                   [(int(i), float(d)) for i, d in obj["opposing"]], int(obj["k"]))


def _bin(ranked: list, num_bins: int, b: int) -> list:
    n = len(ranked)
    lo, hi = (b * n) // num_bins, ((b + 1) * n) // num_bins
    return ranked[lo:hi]


def supporting(index: KdIndex, target_id: int, k: int) -> list[tuple[int, float]]:
    return index.query(index.point(target_id), k, exclude=(target_id,))


def opposing_from(index: KdIndex, x, k: int, num_bins: int = 50, offset: int = 20,
                  exclude=()) -> list[tuple[int, float]]:
    ranked = index.ranked(x, exclude)
    if len(ranked) < num_bins:
        raise InputError(f"need at least {num_bins} candidate points, have {len(ranked)}")
    if not 0 <= offset < num_bins:
        raise InputError(f"offset {offset} outside 0..{num_bins - 1}")
    chosen = _bin(ranked, num_bins, offset)
    if k > len(chosen):
        raise InputError(f"k={k} exceeds bin size {len(chosen)}")
    # the bin is already in (distance, id) order; its head is the deterministic pick
    return chosen[:k]


def opposing(index: KdIndex, target_id: int, k: int, num_bins: int = 50, offset: int = 20):
    return opposing_from(index, index.point(target_id), k, num_bins, offset, exclude=(target_id,))


def exemplar_set(index: KdIndex, target_id: int, k: int, num_bins: int = 50, offset: int = 20) -> ExemplarSet:
    return ExemplarSet(target_id, supporting(index, target_id, k),
                       opposing(index, target_id, k, num_bins, offset), k)


def exemplar_set_for(index: KdIndex, target_id: int, x, k: int, num_bins: int = 50, offset: int = 20) -> ExemplarSet:
    """Exemplars from ``index`` for a query vector that may not be in the index."""
    excl = (target_id,)
    return ExemplarSet(target_id, index.query(x, k, exclude=excl),
                       opposing_from(index, x, k, num_bins, offset, excl), k)


def random_exemplars(candidates, target_id: int, k: int, seed: int, embeddings=None) -> ExemplarSet:
    """Uniform supporting and opposing draws (independent, without replacement).

    ``candidates`` is an int (ids ``0..n-1``) or an id array. Distances are
    NaN unless ``embeddings`` (rows aligned with candidate ids) are given.
    """
    pool = np.arange(candidates) if np.isscalar(candidates) else np.asarray(candidates, dtype=np.int64)
    pool = pool[pool != target_id]
    if not 1 <= k <= len(pool):
        raise InputError(f"k={k} out of range for {len(pool)} candidates")
    rng = np.random.default_rng([seed, int(target_id)])
    sup = np.sort(rng.choice(pool, size=k, replace=False))
    opp = np.sort(rng.choice(pool, size=k, replace=False))

    def dist(i):
        if embeddings is None:
            return float("nan")
        return float(np.linalg.norm(np.asarray(embeddings)[i] - np.asarray(embeddings)[target_id]))

    return ExemplarSet(int(target_id), [(int(i), dist(i)) for i in sup], [(int(i), dist(i)) for i in opp], k)


def quintuplet_exemplars(index: KdIndex, target_id: int, x=None, pool: int = 2000, num_bins: int = 20,
                         use=(0, 1, 18, 19)) -> list[tuple[int, float]]:
    """Four exemplars ``(p+, p++, n--, n-)``: heads of bins ``use`` of the nearest ``pool`` points."""
    x = index.point(target_id) if x is None else x
    ranked = index.ranked(x, exclude=(target_id,))[:pool]
    if len(ranked) < num_bins:
        raise InputError(f"need at least {num_bins} candidates for quintuplet bins")
    return [_bin(ranked, num_bins, b)[0] for b in use]


def save_exemplars(path: str, sets: dict, bins: int | None = None, offset: int | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        for tid in sorted(sets):
            fh.write(json.dumps(sets[tid].to_json(bins, offset)) + "\n")


def load_exemplars(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                s = ExemplarSet.from_json(json.loads(line))
                out[s.target_id] = s
    return out
