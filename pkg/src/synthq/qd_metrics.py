"""Quality and diversity metrics for synthetic query collections.

Quality compares synthetic queries to their documents' human queries
(embedding cosine and character-length similarity). Diversity looks within
each document's query set (paraphrase ratio under a pair scorer, and mean
BLEU-4 of each query against its siblings). Lower diversity scores mean
more diverse sets.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .backends import ScorerBackend
from .corpus import SyntheticQuerySet
from .tokenization import TokenizerSpec, tokenize

BLEU_FLOOR = 1e-9


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class QDReport:
    dist_sim: float
    len_sim: float
    ce: float
    self_bleu: float
    n_queries: int
    n_pairs: int

    def to_dict(self) -> dict:
        return asdict(self)


def dist_sim(
    synthetic: Sequence[tuple[str, str]],
    human: Mapping[str, str],
    backend: ScorerBackend,
) -> float:
    """Mean cosine between each synthetic query and its document's human query.

    ``synthetic`` holds (doc_id, query) records; every synthetic query of a
    document is compared against that document's single human query.
    """
    if not synthetic:
        raise MetricError("no synthetic queries")
    for doc_id, _ in synthetic:
        if doc_id not in human:
            raise MetricError(f"no human query for doc {doc_id}")
    syn_vecs = backend.embed([q for _, q in synthetic])
    doc_ids = sorted({d for d, _ in synthetic})
    hum_vecs = dict(zip(doc_ids, backend.embed([human[d] for d in doc_ids])))
    total = sum(float(v @ hum_vecs[d]) for (d, _), v in zip(synthetic, syn_vecs))
    return total / len(synthetic)


def len_sim(synthetic_lengths: Sequence[int], human_lengths: Sequence[int]) -> float:
    """Mean of 1 - |l_s - l_h| / max(l_s, l_h) over matched length pairs."""
    if len(synthetic_lengths) != len(human_lengths):
        raise MetricError("length lists must match")
    if not synthetic_lengths:
        raise MetricError("no length pairs")
    total = 0.0
    for ls, lh in zip(synthetic_lengths, human_lengths):
        if ls == 0 and lh == 0:
            total += 1.0
        else:
            total += 1.0 - abs(ls - lh) / max(ls, lh)
    return total / len(synthetic_lengths)


def _within_doc_pairs(query_sets: Sequence[SyntheticQuerySet]) -> list[tuple[str, str]]:
    pairs = []
    for qs in query_sets:
        qs_queries = qs.queries
        for i in range(len(qs_queries)):
            for j in range(i + 1, len(qs_queries)):
                pairs.append((qs_queries[i], qs_queries[j]))
    return pairs


def count_pairs(query_sets: Sequence[SyntheticQuerySet]) -> int:
    return sum(len(qs.queries) * (len(qs.queries) - 1) // 2 for qs in query_sets)


def ce_ratio(
    query_sets: Sequence[SyntheticQuerySet],
    backend: ScorerBackend,
    threshold: float = 0.5,
) -> float:
    """Fraction of within-document query pairs scoring above ``threshold``.

    All C(M, 2) unordered pairs are scored exactly; pairs are always sent in
    generation order (i < j) since pair scorers may be directional. A corpus
    with no pairs at all (every set has one query) returns 0 with a warning.
    """
    if any(not qs.queries for qs in query_sets):
        raise MetricError("every query set needs at least one query")
    pairs = _within_doc_pairs(query_sets)
    if not pairs:
        warnings.warn("no within-document query pairs; paraphrase ratio undefined, reporting 0")
        return 0.0
    scores = backend.pair_score(pairs)
    return sum(1 for s in scores if s > threshold) / len(scores)


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Sequence[str], references: Sequence[Sequence[str]]) -> float:
    """BLEU-4 of a token list against reference token lists.

    Geometric mean of modified n-gram precisions for n = 1..4, each clipped
    precision floored at 1e-9 before the log, times the brevity penalty
    exp(1 - r/c) when the candidate is shorter than the closest reference
    (length ties resolve to the shorter reference). Orders where neither the
    candidate nor any reference has an n-gram count as vacuously matched.
    """
    if not candidate:
        raise MetricError("empty candidate")
    refs = [list(r) for r in references if r]
    if not refs:
        raise MetricError("need at least one non-empty reference")

    log_sum = 0.0
    for n in range(1, 5):
        cand_counts = _ngram_counts(candidate, n)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, cnt in _ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        total = sum(cand_counts.values())
        if total == 0:
            precision = 1.0 if not max_ref else BLEU_FLOOR
        else:
            clipped = sum(min(cnt, max_ref[gram]) for gram, cnt in cand_counts.items())
            precision = max(clipped / total, BLEU_FLOOR)
        log_sum += math.log(precision)

    c = len(candidate)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / 4.0)


def self_bleu(queries: Sequence[str], spec: TokenizerSpec) -> float:
    """Mean BLEU-4 of each query against its siblings in one set."""
    if len(queries) < 2:
        raise MetricError("Self-BLEU undefined for M=1")
    token_lists = [tokenize(q, spec) for q in queries]
    scores = []
    for i, cand in enumerate(token_lists):
        refs = token_lists[:i] + token_lists[i + 1 :]
        scores.append(bleu4(cand, refs))
    return sum(scores) / len(scores)


def corpus_self_bleu(query_sets: Sequence[SyntheticQuerySet], spec: TokenizerSpec) -> float:
    """Average per-document self-BLEU over documents with two or more queries."""
    vals = [self_bleu(qs.queries, spec) for qs in query_sets if len(qs.queries) >= 2]
    if not vals:
        raise MetricError("Self-BLEU undefined for M=1")
    return sum(vals) / len(vals)


def measure(
    query_sets: Sequence[SyntheticQuerySet],
    human: Mapping[str, str],
    backend: ScorerBackend,
    spec: TokenizerSpec | None = None,
    threshold: float = 0.5,
) -> QDReport:
    """Compute the full quality/diversity report for a synthetic corpus."""
    spec = spec or TokenizerSpec()
    flat = [(qs.doc_id, q) for qs in query_sets for q in qs.queries]
    if not flat:
        raise MetricError("no queries to measure")
    syn_lengths = [len(q) for _, q in flat]
    hum_lengths = []
    for doc_id, _ in flat:
        if doc_id not in human:
            raise MetricError(f"no human query for doc {doc_id}")
        hum_lengths.append(len(human[doc_id]))
    return QDReport(
        dist_sim=dist_sim(flat, human, backend),
        len_sim=len_sim(syn_lengths, hum_lengths),
        ce=ce_ratio(query_sets, backend, threshold),
        self_bleu=corpus_self_bleu(query_sets, spec),
        n_queries=len(flat),
        n_pairs=count_pairs(query_sets),
    )
