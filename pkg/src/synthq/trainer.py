"""Desk-scale dense retriever: hashed-feature encoder, weighted InfoNCE,
AdamW, and a fully seeded training loop with checkpointing.

The encoder is a linear projection over signed hashed token features. It
stands in for transformer backbones so the loss-level and data-level
contracts (in-batch negatives, per-batch sample weights, gradient and
determinism guarantees) can be verified on one CPU core.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Document
from .eval_stats import ndcg_at_k
from .tokenization import StopwordTable, TokenizerSpec, content_word_count, load_stopwords
from .weighting import (
    WeightConfig,
    WeightedPair,
    compose_and_normalize,
    cw_weights,
    reasoning_index,
)

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)
_FEATURE_SALT = b"toyenc"


class TrainingError(RuntimeError):
    pass


@dataclass
class ToyEncoder:
    """Linear encoder over signed hashed unigram+bigram counts."""

    hash_dim: int = 2048
    embed_dim: int = 128
    scale: float = 20.0
    projection: np.ndarray | None = None

    def features(self, text: str) -> np.ndarray:
        vec = np.zeros(self.hash_dim, dtype=np.float64)
        toks = _TOKEN_RE.findall(text.lower())
        for gram in toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]:
            digest = hashlib.blake2b(
                gram.encode("utf-8"), digest_size=8, key=_FEATURE_SALT
            ).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.hash_dim
            vec[bucket] += 1.0 if digest[4] & 1 else -1.0
        return vec

    def encode(self, text: str) -> np.ndarray:
        """Unit-norm embedding; zero-feature text maps to the first basis vector."""
        if self.projection is None:
            raise TrainingError("encoder has no projection; train or load one first")
        raw = self.features(text) @ self.projection
        norm = np.linalg.norm(raw)
        if norm == 0:
            fallback = np.zeros(self.embed_dim, dtype=np.float64)
            fallback[0] = 1.0
            return fallback
        return raw / norm


def new_encoder(
    hash_dim: int = 2048,
    embed_dim: int = 128,
    scale: float = 20.0,
    seed: int = 0,
) -> ToyEncoder:
    rng = np.random.default_rng(seed)
    projection = rng.normal(0.0, 1.0 / math.sqrt(hash_dim), size=(hash_dim, embed_dim))
    return ToyEncoder(hash_dim=hash_dim, embed_dim=embed_dim, scale=scale, projection=projection)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    weight_scheme: WeightConfig = field(default_factory=WeightConfig)
    lr_schedule: str = "constant"  # constant | cosine
    eval_every: int = 50
    val_fraction: float = 0.1
    hash_dim: int = 2048
    embed_dim: int = 128
    scale: float = 20.0
    language: str = "en"

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size < 2 or self.epochs < 1:
            raise TrainingError("lr, batch_size and epochs must be positive (batch >= 2)")
        if not 0.0 < self.val_fraction < 1.0:
            raise TrainingError("val_fraction must be in (0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            raise TrainingError(f"unknown lr schedule {self.lr_schedule!r}")


def config_hash(cfg: TrainConfig) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise TrainingError("zero-norm vector passed to the contrastive loss")
    return x / norms, norms


def info_nce_losses(queries: np.ndarray, docs: np.ndarray, scale: float) -> np.ndarray:
    """Per-sample -log softmax loss over in-batch documents, aligned positives."""
    u, _ = _normalize_rows(np.asarray(queries, dtype=np.float64))
    v, _ = _normalize_rows(np.asarray(docs, dtype=np.float64))
    scores = scale * (u @ v.T)
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
    return log_z - np.diag(scores)


def weighted_info_nce(
    queries: np.ndarray,
    docs: np.ndarray,
    weights: np.ndarray,
    scale: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted InfoNCE over in-batch negatives with exact gradients.

    loss = (1/B) * sum_i w_i * (-log softmax_j(scale * cos(q_i, d_j))[i]).
    Cosines are computed on the raw inputs (normalization included in the
    gradient), so finite differences on the inputs match the analytic
    gradients. Weights must be nonnegative.
    """
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(docs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if q.shape != d.shape or q.ndim != 2:
        raise TrainingError("queries and docs must be equal-shape 2d arrays")
    n = q.shape[0]
    if n < 2:
        raise TrainingError("need at least 2 samples for in-batch negatives")
    if w.shape != (n,):
        raise TrainingError("weights length must match the batch")
    if np.any(w < 0):
        raise TrainingError("weights must be nonnegative")

    u, q_norms = _normalize_rows(q)
    v, d_norms = _normalize_rows(d)
    scores = scale * (u @ v.T)
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    losses = np.log(exp.sum(axis=1)) + scores.max(axis=1) - np.diag(scores)
    loss = float(np.mean(w * losses))

    grad_scores = probs - np.eye(n)
    grad_scores *= (w / n)[:, None]
    grad_u = scale * (grad_scores @ v)
    grad_v = scale * (grad_scores.T @ u)
    # chain through the row normalization: project out the radial component
    grad_q = (grad_u - (grad_u * u).sum(axis=1, keepdims=True) * u) / q_norms
    grad_d = (grad_v - (grad_v * v).sum(axis=1, keepdims=True) * v) / d_norms
    return loss, grad_q, grad_d


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale the gradient down to ``max_norm`` when it exceeds it."""
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def cosine_lr_factor(step: int, total_steps: int) -> float:
    return 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def optimizer_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    cfg: TrainConfig,
    step: int,
    total_steps: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One AdamW update (decoupled decay, bias correction, global-norm clip).

    ``step`` is 1-based. Returns new (param, m, v); inputs are not mutated.
    """
    if param.shape != grad.shape:
        raise TrainingError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient at step {step}")
    grad = clip_by_global_norm(grad, cfg.grad_clip)
    lr = cfg.lr
    if cfg.lr_schedule == "cosine":
        if not total_steps:
            raise TrainingError("cosine schedule needs total_steps")
        lr *= cosine_lr_factor(step, total_steps)
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    param = param - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)) - lr * cfg.weight_decay * param
    return param, m, v


@dataclass
class TrainResult:
    encoder: ToyEncoder  # carries the best-validation projection
    metrics: list[dict]
    best_val_ndcg: float
    untrained_val_ndcg: float
    config_hash: str
    state: dict  # full optimizer/loop state for checkpointing


def save_checkpoint(state: dict, path: str | Path) -> None:
    """Write the training state as a single self-describing .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {k: state[k] for k in (
        "config_hash", "step", "epoch", "next_batch", "best_val", "best_step",
        "untrained_val", "hash_dim", "embed_dim", "scale",
    )}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8),
            projection=state["projection"],
            m=state["m"],
            v=state["v"],
            best_projection=state["best_projection"],
        )


def load_checkpoint(path: str | Path) -> dict:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        state = dict(meta)
        state["projection"] = data["projection"]
        state["m"] = data["m"]
        state["v"] = data["v"]
        state["best_projection"] = data["best_projection"]
    return state


def load_encoder(path: str | Path) -> ToyEncoder:
    """Rebuild the best-validation encoder from a checkpoint."""
    state = load_checkpoint(path)
    return ToyEncoder(
        hash_dim=int(state["hash_dim"]),
        embed_dim=int(state["embed_dim"]),
        scale=float(state["scale"]),
        projection=state["best_projection"],
    )


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    # order depends only on (seed, epoch) so resumed runs replay identically
    return np.random.default_rng([seed, 0xA5F3, epoch]).permutation(n)


def _batch_starts(n: int, batch_size: int) -> list[int]:
    # final chunk is kept unless it cannot host an in-batch negative
    return [s for s in range(0, n, batch_size) if min(batch_size, n - s) >= 2]


class _ValScorer:
    """Fast validation NDCG@10 over precomputed feature matrices."""

    def __init__(self, doc_ids: list[str], phi_docs: np.ndarray, val_queries: list[tuple[str, str]]):
        self.doc_ids = doc_ids
        self.phi_docs = phi_docs
        self.val_queries = val_queries  # (query_text is pre-featurized below)

    def prepare(self, encoder: ToyEncoder) -> None:
        self.phi_q = np.stack([encoder.features(q) for q, _ in self.val_queries])

    def score(self, projection: np.ndarray) -> float:
        doc_emb = self.phi_docs @ projection
        doc_norm = np.linalg.norm(doc_emb, axis=1, keepdims=True)
        doc_norm[doc_norm == 0] = 1.0
        doc_emb /= doc_norm
        q_emb = self.phi_q @ projection
        q_norm = np.linalg.norm(q_emb, axis=1, keepdims=True)
        q_norm[q_norm == 0] = 1.0
        q_emb /= q_norm
        scores = q_emb @ doc_emb.T
        vals = []
        for row, (_, pos_doc) in enumerate(self.val_queries):
            order = sorted(
                range(len(self.doc_ids)), key=lambda i: (-scores[row, i], self.doc_ids[i])
            )
            ranking = [self.doc_ids[i] for i in order[:10]]
            vals.append(ndcg_at_k(ranking, {pos_doc: 1}, k=10))
        return float(np.mean(vals))


def train(
    pairs: list[WeightedPair],
    docs: list[Document],
    cfg: TrainConfig,
    resume_from: str | Path | None = None,
    max_steps: int | None = None,
    stopwords: StopwordTable | None = None,
) -> TrainResult:
    """Train the encoder on weighted query-document pairs.

    Fully deterministic for a fixed seed: the validation split, projection
    init, and per-epoch shuffles are all derived from ``cfg.seed``, and
    resuming from a checkpoint reproduces the uninterrupted run bit for bit.
    Per-batch sample weights follow ``cfg.weight_scheme``. The returned
    encoder holds the parameters of the best validation checkpoint.
    """
    n = len(pairs)
    if n < cfg.batch_size:
        raise TrainingError(f"need at least batch_size={cfg.batch_size} pairs, got {n}")
    doc_by_id = {d.id: d for d in docs}
    for pair in pairs:
        if pair.doc_id not in doc_by_id:
            raise TrainingError(f"unknown doc {pair.doc_id}")

    cfg_hash = config_hash(cfg)
    scheme = cfg.weight_scheme.scheme

    # seeded setup: split first, then init, in a fixed order
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    if n - n_val < cfg.batch_size:
        n_val = n - cfg.batch_size
    if n_val < 1:
        raise TrainingError("not enough pairs for a validation split")
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    encoder = ToyEncoder(hash_dim=cfg.hash_dim, embed_dim=cfg.embed_dim, scale=cfg.scale)
    init_projection = rng.normal(
        0.0, 1.0 / math.sqrt(cfg.hash_dim), size=(cfg.hash_dim, cfg.embed_dim)
    )

    # featurize once; parameters change every step but features never do
    train_pairs = [pairs[i] for i in train_idx]
    phi_q = np.stack([encoder.features(p.query) for p in train_pairs])
    phi_d = np.stack([encoder.features(doc_by_id[p.doc_id].text) for p in train_pairs])

    pair_cws: list[int] | None = None
    if scheme in ("cw", "ri_times_cw"):
        table = stopwords
        spec = TokenizerSpec(language=cfg.language)
        if table is None:
            table = load_stopwords(cfg.language)
        pair_cws = [
            p.raw_cw if p.raw_cw is not None else content_word_count(p.query, spec, table)
            for p in train_pairs
        ]
    phi_aug: np.ndarray | None = None
    if scheme in ("ri", "ri_times_cw"):
        missing = [p.doc_id for p in train_pairs if not p.aug_query]
        if missing:
            raise TrainingError(
                f"scheme {scheme!r} needs aug_query on every pair; missing for {missing[0]}"
            )
        phi_aug = np.stack([encoder.features(p.aug_query) for p in train_pairs])

    scorer = _ValScorer(
        doc_ids=[d.id for d in docs],
        phi_docs=np.stack([encoder.features(d.text) for d in docs]),
        val_queries=[(pairs[i].query, pairs[i].doc_id) for i in val_idx],
    )
    scorer.prepare(encoder)

    n_train = len(train_pairs)
    starts = _batch_starts(n_train, cfg.batch_size)
    total_steps = len(starts) * cfg.epochs

    metrics: list[dict] = []
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state["config_hash"] != cfg_hash:
            raise TrainingError("checkpoint was written under a different config")
        projection = state["projection"]
        m, v = state["m"], state["v"]
        step = int(state["step"])
        start_epoch = int(state["epoch"])
        next_batch = int(state["next_batch"])
        best_val = float(state["best_val"])
        best_step = int(state["best_step"])
        untrained_val = float(state["untrained_val"])
        best_projection = state["best_projection"]
    else:
        projection = init_projection
        m = np.zeros_like(projection)
        v = np.zeros_like(projection)
        step = 0
        start_epoch = 0
        next_batch = 0
        untrained_val = scorer.score(projection)
        best_val = untrained_val
        best_step = 0
        best_projection = projection.copy()
        metrics.append({"step": 0, "val_ndcg": untrained_val})

    stop = False
    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, n_train)
        first_batch = next_batch if epoch == start_epoch else 0
        for batch_no in range(first_batch, len(starts)):
            s = starts[batch_no]
            idx = order[s : s + cfg.batch_size]
            bq, bd = phi_q[idx] @ projection, phi_d[idx] @ projection

            if scheme == "uniform":
                w = np.ones(len(idx))
            elif scheme == "cw":
                w = np.asarray(cw_weights([pair_cws[i] for i in idx], cfg.weight_scheme.kappa_cw))
            else:
                base = info_nce_losses(bq, bd, cfg.scale)
                aug = info_nce_losses(phi_aug[idx] @ projection, bd, cfg.scale)
                ri = [
                    reasoning_index(float(lb), float(la), cfg.weight_scheme.kappa_ri)
                    for lb, la in zip(base, aug)
                ]
                if scheme == "ri_times_cw":
                    raw = [
                        r * min(float(pair_cws[i]), cfg.weight_scheme.kappa_cw)
                        for r, i in zip(ri, idx)
                    ]
                else:
                    raw = ri
                w = np.asarray(compose_and_normalize(raw))

            loss, grad_q, grad_d = weighted_info_nce(bq, bd, w, cfg.scale)
            grad_p = phi_q[idx].T @ grad_q + phi_d[idx].T @ grad_d
            step += 1
            projection, m, v = optimizer_step(
                projection, grad_p, m, v, cfg, step, total_steps=total_steps
            )
            metrics.append({"step": step, "loss": loss})
            if cfg.eval_every and step % cfg.eval_every == 0:
                val = scorer.score(projection)
                metrics.append({"step": step, "val_ndcg": val})
                if val > best_val:
                    best_val, best_step = val, step
                    best_projection = projection.copy()
            if max_steps is not None and step >= max_steps:
                next_batch = batch_no + 1
                if next_batch >= len(starts):
                    epoch, next_batch = epoch + 1, 0
                stop = True
                break
        else:
            next_batch = 0
            continue
        break

    if not stop:
        epoch = cfg.epochs
        next_batch = 0
        val = scorer.score(projection)
        metrics.append({"step": step, "val_ndcg": val})
        if val > best_val:
            best_val, best_step = val, step
            best_projection = projection.copy()

    encoder.projection = best_projection
    state = {
        "config_hash": cfg_hash,
        "step": step,
        "epoch": epoch,
        "next_batch": next_batch,
        "best_val": best_val,
        "best_step": best_step,
        "untrained_val": untrained_val,
        "hash_dim": cfg.hash_dim,
        "embed_dim": cfg.embed_dim,
        "scale": cfg.scale,
        "projection": projection,
        "m": m,
        "v": v,
        "best_projection": best_projection,
    }
    return TrainResult(
        encoder=encoder,
        metrics=metrics,
        best_val_ndcg=best_val,
        untrained_val_ndcg=untrained_val,
        config_hash=cfg_hash,
        state=state,
    )
