"""Retrieval evaluation and the complexity-diversity statistics.

NDCG@10 over brute-force cosine ranking, Pearson correlation with a
two-tailed t-test, ordinary least squares for the zero-benefit complexity
threshold, and positive-rate buckets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class EvalError(ValueError):
    pass


# query_id -> doc_id -> graded relevance
RelevanceJudgments = dict[str, dict[str, int]]


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p: float
    n: int


@dataclass(frozen=True)
class ThresholdFit:
    slope: float
    intercept: float
    zero_crossing: float
    r: float
    n: int


def load_qrels(path: str | Path) -> RelevanceJudgments:
    """Read JSON-Lines relevance judgments {query_id, doc_id, rel}."""
    judgments: RelevanceJudgments = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                qid, did, rel = rec["query_id"], rec["doc_id"], int(rec["rel"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EvalError(f"malformed qrels line {lineno}: {exc}") from exc
            if rel < 0:
                raise EvalError(f"negative relevance on line {lineno}")
            judgments.setdefault(qid, {})[did] = rel
    return judgments


def _dcg(rels: Sequence[int]) -> float:
    return sum((2**rel - 1) / math.log2(i + 2) for i, rel in enumerate(rels))


def ndcg_at_k(ranking: Sequence[str], judgments: dict[str, int], k: int = 10) -> float:
    """Normalized discounted cumulative gain at cutoff ``k``.

    Gain is 2^rel - 1 with a log2(rank+1) discount; unjudged documents count
    as relevance 0.
    """
    if not judgments:
        raise EvalError("empty judgments")
    ideal = sorted(judgments.values(), reverse=True)[:k]
    idcg = _dcg(ideal)
    if idcg <= 0:
        raise EvalError("no positive judgments for query")
    gains = [judgments.get(doc_id, 0) for doc_id in ranking[:k]]
    return _dcg(gains) / idcg


@dataclass
class DocIndex:
    """Document ids with their precomputed unit embedding matrix."""

    doc_ids: list[str]
    matrix: np.ndarray  # (n_docs, embed_dim), unit rows

    def __post_init__(self) -> None:
        if len(self.doc_ids) != self.matrix.shape[0]:
            raise EvalError("doc_ids and matrix rows disagree")


def build_doc_index(docs, encoder) -> DocIndex:
    """Embed every document once for brute-force ranking."""
    ids = [d.id for d in docs]
    matrix = np.stack([encoder.encode(d.text) for d in docs])
    return DocIndex(doc_ids=ids, matrix=matrix)


def rank_corpus(query: str, encoder, index: DocIndex) -> list[str]:
    """All documents sorted by descending cosine, ties by ascending doc id."""
    scores = index.matrix @ encoder.encode(query)
    order = sorted(range(len(index.doc_ids)), key=lambda i: (-scores[i], index.doc_ids[i]))
    return [index.doc_ids[i] for i in order]


def mean_ndcg(
    queries: dict[str, str], judgments: RelevanceJudgments, encoder, index: DocIndex, k: int = 10
) -> float:
    """Average NDCG@k over queries that have at least one positive judgment."""
    vals = []
    for qid, text in queries.items():
        per_query = judgments.get(qid, {})
        if sum(per_query.values()) == 0:
            continue
        vals.append(ndcg_at_k(rank_corpus(text, encoder, index), per_query, k))
    if not vals:
        raise EvalError("no evaluable queries")
    return sum(vals) / len(vals)


def pearson_r_p(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Sample Pearson r with a two-tailed significance test.

    p comes from t = r*sqrt((n-2)/(1-r^2)) against Student's t with n-2
    degrees of freedom: closed forms for 1 and 2 degrees of freedom, a
    continued-fraction incomplete beta otherwise.
    """
    n = len(x)
    if n != len(y):
        raise EvalError("x and y must have equal length")
    if n < 3:
        raise EvalError("need at least 3 points")
    mx = sum(x) / n
    my = sum(y) / n
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx <= 0 or syy <= 0:
        raise EvalError("zero variance")
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    df = n - 2
    if 1.0 - r * r <= 0:
        return CorrelationResult(r=r, p=0.0, n=n)
    t = abs(r) * math.sqrt(df / (1.0 - r * r))
    return CorrelationResult(r=r, p=_t_two_tailed_p(t, df), n=n)


def _t_two_tailed_p(t: float, df: int) -> float:
    if df == 1:
        return 1.0 - 2.0 / math.pi * math.atan(t)
    if df == 2:
        return 1.0 - t / math.sqrt(t * t + 2.0)
    return _reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) via Lentz's continued fraction."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # The continued fraction converges fast only for x below the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-14) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise EvalError("incomplete beta continued fraction did not converge")


def fit_cw_threshold(points: Sequence[tuple[float, float]]) -> ThresholdFit:
    """OLS fit delta = slope*cw + intercept; the zero crossing is -b/m."""
    n = len(points)
    if n < 3:
        raise EvalError("need at least 3 points")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((a - mx) ** 2 for a in xs)
    if sxx <= 0:
        raise EvalError("zero variance")
    sxy = sum((a - mx) * (b - my) for a, b in zip(xs, ys))
    slope = sxy / sxx
    if abs(slope) < 1e-12:
        raise EvalError("no trend")
    intercept = my - slope * mx
    r = pearson_r_p(xs, ys).r
    return ThresholdFit(
        slope=slope, intercept=intercept, zero_crossing=-intercept / slope, r=r, n=n
    )


def positive_rate_buckets(
    points: Sequence[tuple[float, float]], boundaries: tuple[float, float] = (7.0, 10.0)
) -> dict[str, tuple[int, int]]:
    """Count delta > 0 outcomes in low/mid/high complexity buckets.

    Buckets are cw < lo, lo <= cw <= hi, cw > hi.
    """
    if not points:
        raise EvalError("no points")
    lo, hi = boundaries
    if lo > hi:
        raise EvalError("boundaries must be ordered")
    counts = {"below": [0, 0], "mid": [0, 0], "above": [0, 0]}
    for cw, delta in points:
        if cw < lo:
            key = "below"
        elif cw > hi:
            key = "above"
        else:
            key = "mid"
        counts[key][1] += 1
        counts[key][0] += delta > 0
    return {k: (pos, total) for k, (pos, total) in counts.items()}
