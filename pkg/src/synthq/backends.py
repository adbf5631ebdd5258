"""Scorer backends: a deterministic local stub and the HTTP sidecar client.

A backend provides two contracts: ``embed`` maps texts to unit-norm vectors
of a fixed dimension, and ``pair_score`` maps text pairs to floats in
[0, 1]. The stub needs no external models and is the default; the sidecar
client talks to a scoring service over JSON/HTTP.
"""

from __future__ import annotations

import hashlib
import re
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class BackendError(RuntimeError):
    pass


class ScorerBackend(Protocol):
    def describe(self) -> str: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...

    def pair_score(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


def _simple_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _hash_ngrams(text: str) -> Iterable[str]:
    toks = _simple_tokens(text)
    yield from toks
    for a, b in zip(toks, toks[1:]):
        yield f"{a} {b}"


def _bucket_sign(gram: str, dim: int, salt: bytes = b"stub") -> tuple[int, int]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=salt).digest()
    bucket = int.from_bytes(digest[:4], "big") % dim
    sign = 1 if digest[4] & 1 else -1
    return bucket, sign


def stub_embed(texts: Sequence[str], dim: int = 256) -> np.ndarray:
    """Deterministic hashed n-gram embeddings, one unit row per text.

    Token unigrams and bigrams are hashed into ``dim`` signed buckets with a
    pinned keyed hash, so outputs are identical across runs and platforms.
    A text with no tokens maps to the first basis vector.
    """
    if dim < 8:
        raise BackendError("embedding dimension must be at least 8")
    out = np.zeros((len(texts), dim), dtype=np.float64)
    for row, text in enumerate(texts):
        hit = False
        for gram in _hash_ngrams(text):
            bucket, sign = _bucket_sign(gram, dim)
            out[row, bucket] += sign
            hit = True
        if not hit:
            out[row, 0] = 1.0
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    # rows can cancel to zero when signed counts collide; pin those too
    for row in np.nonzero(norms[:, 0] == 0)[0]:
        out[row, 0] = 1.0
        norms[row, 0] = 1.0
    return out / norms


class StubBackend:
    """Model-free backend: hashed embeddings and token-Jaccard pair scores."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def describe(self) -> str:
        return f"stub:hash-ngram-{self.dim}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return stub_embed(texts, self.dim)

    def pair_score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        scores = []
        for a, b in pairs:
            ta, tb = set(_simple_tokens(a)), set(_simple_tokens(b))
            if not ta and not tb:
                scores.append(1.0)
            elif not ta or not tb:
                scores.append(0.0)
            else:
                scores.append(len(ta & tb) / len(ta | tb))
        return scores


class SidecarBackend:
    """Client for the scoring sidecar's /embed, /score-pairs and /segment."""

    def __init__(self, url: str, batch_size: int = 64, timeout: float = 60.0):
        self.url = url.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout

    def describe(self) -> str:
        info = self.healthz()
        return f"sidecar:{info.get('embed_model')}:{info.get('ce_model')}"

    def _post(self, endpoint: str, payload: dict) -> dict:
        try:
            resp = requests.post(
                f"{self.url}{endpoint}", json=payload, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BackendError(f"sidecar unreachable at {self.url}{endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(
                f"sidecar {endpoint} returned {resp.status_code}: {resp.text[:200]}"
            )
        return resp.json()

    def healthz(self) -> dict:
        try:
            resp = requests.get(f"{self.url}/healthz", timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"sidecar unreachable at {self.url}/healthz: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"sidecar /healthz returned {resp.status_code}")
        return resp.json()

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            chunk = list(texts[start : start + self.batch_size])
            data = self._post("/embed", {"texts": chunk})
            vectors = data["vectors"]
            if len(vectors) != len(chunk):
                raise BackendError("sidecar /embed response misaligned with request")
            rows.extend(vectors)
        out = np.asarray(rows, dtype=np.float64)
        norms = np.linalg.norm(out, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise BackendError("sidecar returned non-unit embedding vectors")
        return out

    def pair_score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        scores: list[float] = []
        for start in range(0, len(pairs), self.batch_size):
            chunk = [list(p) for p in pairs[start : start + self.batch_size]]
            data = self._post("/score-pairs", {"pairs": chunk})
            got = data["scores"]
            if len(got) != len(chunk):
                raise BackendError("sidecar /score-pairs response misaligned with request")
            scores.extend(float(s) for s in got)
        if any(s < 0.0 or s > 1.0 for s in scores):
            raise BackendError("sidecar pair scores outside [0, 1]")
        return scores

    def segment(self, texts: Sequence[str], lang: str) -> list[list[str]]:
        data = self._post("/segment", {"texts": list(texts), "lang": lang})
        tokens = data["tokens"]
        if len(tokens) != len(texts):
            raise BackendError("sidecar /segment response misaligned with request")
        return tokens


def backend_from_spec(spec: str) -> ScorerBackend:
    """Build a backend from ``stub`` or ``sidecar:<url>``."""
    if spec == "stub":
        return StubBackend()
    if spec.startswith("sidecar:"):
        url = spec.split(":", 1)[1]
        if not url:
            raise BackendError("sidecar backend needs a URL, e.g. sidecar:http://host:8900")
        return SidecarBackend(url)
    raise BackendError(f"unknown backend spec {spec!r}; expected 'stub' or 'sidecar:<url>'")
