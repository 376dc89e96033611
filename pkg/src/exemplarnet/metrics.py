"""Evaluation: attention rank correlation, consensus VQA accuracy, BLEU-n, ROUGE-L."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import downscale_map
from .encoders import InputError


class UndefinedCorrelationError(ValueError):
    pass


@dataclass
class RankCorrelationResult:
    values: list
    mean: float


def rank_correlation(pred, human) -> float:
    """``1 - 6 S / (N^3 - N)`` with S the summed squared rank differences.

    Ties get average ranks. A human map on a finer square grid is block-mean
    pooled down to the predicted resolution first.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    h = np.asarray(human, dtype=np.float64).ravel()
    if h.size != p.size:
        side = math.isqrt(p.size)
        if side * side != p.size:
            raise InputError(f"cannot compare maps of length {p.size} and {h.size}")
        h = downscale_map(h, side).ravel()
    n = p.size
    if n < 2:
        raise InputError("rank correlation needs at least 2 regions")
    if np.all(p == p[0]) or np.all(h == h[0]):
        raise UndefinedCorrelationError("rank correlation undefined for a constant map")
    s = float(np.sum((rankdata(p) - rankdata(h)) ** 2))
    return 1.0 - 6.0 * s / (n ** 3 - n)


def multi_map_rank_correlation(pred, humans) -> RankCorrelationResult:
    if len(humans) == 0:
        raise InputError("need at least one human map")
    vals = [rank_correlation(pred, h) for h in humans]
    return RankCorrelationResult(vals, float(np.mean(vals)))


def normalize_answer(a) -> str:
    return " ".join(str(a).lower().split())


def vqa_accuracy(predicted, annotations) -> float:
    """Mean over questions of ``min(#annotators agreeing / 3, 1)``."""
    if len(predicted) != len(annotations):
        raise InputError("one annotation list per prediction is required")
    scores = []
    for pred, anns in zip(predicted, annotations):
        if not anns:
            raise InputError("question without annotations")
        p = normalize_answer(pred)
        hits = sum(normalize_answer(t) == p for t in anns)
        scores.append(min(hits / 3.0, 1.0))
    return float(np.mean(scores)) if scores else 0.0


def _ngrams(seq, n: int) -> Counter:
    seq = list(seq)
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu_n(candidate, references, n: int = 4) -> float:
    """Cumulative BLEU-n: clipped precisions, geometric mean, brevity penalty.

    Reference length for the penalty is the closest one (shorter wins ties).
    """
    if not references:
        raise InputError("bleu_n needs at least one reference")
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    cand = list(candidate)
    if not cand:
        warnings.warn("empty candidate scores 0", stacklevel=2)
        return 0.0
    log_p = 0.0
    for m in range(1, n + 1):
        cnt = _ngrams(cand, m)
        total = sum(cnt.values())
        if total == 0:
            return 0.0
        best = Counter()
        for ref in references:
            for g, c in _ngrams(ref, m).items():
                best[g] = max(best[g], c)
        clipped = sum(min(c, best[g]) for g, c in cnt.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total) / n
    c = len(cand)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def lcs_length(a, b) -> int:
    a, b = list(a), list(b)
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, references, beta: float = 1.2) -> float:
    """LCS F-measure using the best precision and best recall over references."""
    if not references:
        raise InputError("rouge_l needs at least one reference")
    cand = list(candidate)
    if not cand:
        warnings.warn("empty candidate scores 0", stacklevel=2)
        return 0.0
    precs, recs = [], []
    for ref in references:
        ref = list(ref)
        lcs = lcs_length(cand, ref)
        precs.append(lcs / len(cand))
        recs.append(lcs / len(ref) if ref else 0.0)
    p, r = max(precs), max(recs)
    if p == 0 or r == 0:
        return 0.0
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
