"""Complexity-based sample weights for contrastive training batches.

Two raw signals are supported: the truncated content-word count of the
query, and the reasoning index (a truncated loss ratio between the original
and a reasoning-augmented query). Either signal, or their product, is
normalized per batch so weights always average to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SCHEMES = ("uniform", "cw", "ri", "ri_times_cw")


class WeightingError(ValueError):
    pass


@dataclass
class WeightedPair:
    """One (query, positive document) training unit.

    ``raw_cw`` is filled by the annotation pass; ``aug_query`` carries the
    reasoning-augmented form required by the ri schemes.
    """

    query: str
    doc_id: str
    weight: float = 1.0
    raw_cw: int | None = None
    aug_query: str | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.weight) or self.weight <= 0:
            raise WeightingError(f"weight must be finite and positive, got {self.weight}")


@dataclass(frozen=True)
class WeightConfig:
    scheme: str = "uniform"
    kappa_cw: float = 100.0
    kappa_ri: float = 5.0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise WeightingError(f"unknown weighting scheme {self.scheme!r}")
        if self.kappa_cw <= 0 or self.kappa_ri <= 0:
            raise WeightingError("kappas must be positive")


def cw_weights(batch_cws: list[int], kappa: float) -> list[float]:
    """Truncate content-word counts at ``kappa`` and normalize to mean one.

    w_i = min(cw_i, kappa) * |B| / sum_j min(cw_j, kappa)
    """
    if not batch_cws:
        raise WeightingError("empty batch")
    if kappa <= 0:
        raise WeightingError("kappa must be positive")
    truncated = [min(float(c), kappa) for c in batch_cws]
    total = sum(truncated)
    if total <= 0:
        raise WeightingError("degenerate batch: zero total CW")
    n = len(truncated)
    return [t * n / total for t in truncated]


def reasoning_index(loss_q: float, loss_q_prime: float, kappa: float = 5.0) -> float:
    """Truncated ratio of the original-query loss to the augmented-query loss.

    Both losses are per-sample contrastive losses against the same positive
    document, computed with unit weights.
    """
    if loss_q_prime <= 0:
        raise WeightingError(
            f"augmented-query loss must be positive, got {loss_q_prime}"
        )
    if loss_q < 0:
        raise WeightingError(f"loss must be nonnegative, got {loss_q}")
    return min(loss_q / loss_q_prime, kappa)


def compose_and_normalize(raw: list[float]) -> list[float]:
    """Normalize nonnegative raw weights to mean one over the batch."""
    if not raw:
        raise WeightingError("empty batch")
    if any(r < 0 for r in raw):
        raise WeightingError("raw weights must be nonnegative")
    total = sum(raw)
    if total <= 0:
        raise WeightingError("degenerate batch: zero total raw weight")
    n = len(raw)
    return [r * n / total for r in raw]
