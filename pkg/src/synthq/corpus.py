"""Corpus ingestion, JSON-Lines persistence, and the response cache.

All record files are UTF-8 JSON-Lines. Ingestion is order-preserving and
deterministic; the cache is content-addressed by a hash of the canonical
request payload and returns byte-identical responses on hits.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .weighting import WeightedPair

QUERY_MODES = ("diverse", "paraphrase")


class CorpusError(ValueError):
    pass


class CacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    language: str = "en"
    group_id: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if not self.text.strip():
            raise CorpusError(f"document {self.id!r} has empty text")


@dataclass(frozen=True)
class HumanQuery:
    doc_id: str
    text: str


@dataclass
class SyntheticQuerySet:
    doc_id: str
    mode: str
    queries: list[str]
    generator_id: str
    prompt_hash: str

    def __post_init__(self) -> None:
        if self.mode not in QUERY_MODES:
            raise CorpusError(f"unknown query mode {self.mode!r}")
        if not self.queries or any(not q for q in self.queries):
            raise CorpusError(f"query set for {self.doc_id!r} has empty queries")


def _iter_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON on line {lineno}: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"malformed record on line {lineno}: not an object")
            yield lineno, record


def _write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_documents(path: str | Path, limit: int | None = None) -> list[Document]:
    """Read documents.jsonl, keeping the first ``limit`` records in file order.

    The prefix (rather than a random sample) keeps subsampling reproducible;
    callers wanting a random subset should shuffle with an explicit seed.
    """
    docs: list[Document] = []
    seen: dict[str, int] = {}
    for lineno, rec in _iter_jsonl(path):
        if limit is not None and len(docs) >= limit:
            break
        try:
            doc = Document(
                id=rec["id"],
                text=rec["text"],
                language=rec.get("language", "en"),
                group_id=rec.get("group_id"),
            )
        except KeyError as exc:
            raise CorpusError(f"missing field {exc} on line {lineno}") from exc
        if doc.id in seen:
            raise CorpusError(f"duplicate id {doc.id} (line {lineno})")
        seen[doc.id] = lineno
        docs.append(doc)
    return docs


def load_human_queries(path: str | Path) -> list[HumanQuery]:
    queries = []
    for lineno, rec in _iter_jsonl(path):
        try:
            queries.append(HumanQuery(doc_id=rec["doc_id"], text=rec["text"]))
        except KeyError as exc:
            raise CorpusError(f"missing field {exc} on line {lineno}") from exc
    return queries


def human_query_map(queries: Sequence[HumanQuery]) -> dict[str, str]:
    """doc_id -> reference query text; the first query per document wins."""
    out: dict[str, str] = {}
    for q in queries:
        out.setdefault(q.doc_id, q.text)
    return out


def save_query_sets(sets: Sequence[SyntheticQuerySet], path: str | Path) -> None:
    _write_jsonl(
        path,
        (
            {
                "doc_id": qs.doc_id,
                "mode": qs.mode,
                "queries": qs.queries,
                "generator_id": qs.generator_id,
                "prompt_hash": qs.prompt_hash,
            }
            for qs in sets
        ),
    )


def load_query_sets(path: str | Path) -> list[SyntheticQuerySet]:
    sets = []
    for lineno, rec in _iter_jsonl(path):
        try:
            sets.append(
                SyntheticQuerySet(
                    doc_id=rec["doc_id"],
                    mode=rec["mode"],
                    queries=list(rec["queries"]),
                    generator_id=rec["generator_id"],
                    prompt_hash=rec["prompt_hash"],
                )
            )
        except KeyError as exc:
            raise CorpusError(f"missing field {exc} on line {lineno}") from exc
    return sets


def save_pairs(
    pairs: Sequence[WeightedPair],
    path: str | Path,
    doc_ids: set[str] | None = None,
) -> None:
    """Write pairs.jsonl; when ``doc_ids`` is given, referenced docs must exist."""
    if doc_ids is not None:
        for pair in pairs:
            if pair.doc_id not in doc_ids:
                raise CorpusError(f"unknown doc {pair.doc_id}")

    def to_record(pair: WeightedPair) -> dict:
        rec = {"query": pair.query, "doc_id": pair.doc_id, "weight": pair.weight}
        if pair.raw_cw is not None:
            rec["raw_cw"] = pair.raw_cw
        if pair.aug_query is not None:
            rec["aug_query"] = pair.aug_query
        return rec

    _write_jsonl(path, (to_record(p) for p in pairs))


def load_pairs(path: str | Path) -> list[WeightedPair]:
    pairs = []
    for lineno, rec in _iter_jsonl(path):
        try:
            pairs.append(
                WeightedPair(
                    query=rec["query"],
                    doc_id=rec["doc_id"],
                    weight=float(rec.get("weight", 1.0)),
                    raw_cw=rec.get("raw_cw"),
                    aug_query=rec.get("aug_query"),
                )
            )
        except KeyError as exc:
            raise CorpusError(f"missing field {exc} on line {lineno}") from exc
    return pairs


def canonical_payload(obj) -> bytes:
    """Canonical serialization for cache keys: sorted keys, no extra spaces."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


_CACHE_MAGIC = b"SQC1"


class ResponseCache:
    """Content-addressed store for remote-call responses.

    One file per key under ``<root>/<first two hex>/<key>.bin``, each holding
    a checksum so corruption surfaces as an error instead of a stale answer.
    Writes go to a temp file and rename into place, so concurrent readers
    never observe partial entries.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    @staticmethod
    def key_for(payload: bytes) -> str:
        return hashlib.sha256(payload).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.bin"

    def get(self, key: str) -> bytes | None:
        path = self._path(key)
        if not path.exists():
            return None
        blob = path.read_bytes()
        if len(blob) < 36 or blob[:4] != _CACHE_MAGIC:
            raise CacheError(f"corrupt cache entry {path}")
        checksum, value = blob[4:36], blob[36:]
        if hashlib.sha256(value).digest() != checksum:
            raise CacheError(f"corrupt cache entry {path}")
        return value

    def put(self, key: str, value: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = _CACHE_MAGIC + hashlib.sha256(value).digest() + value
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def delete(self, key: str) -> None:
        path = self._path(key)
        if path.exists():
            path.unlink()

    def get_or_call(self, key_payload: bytes, remote: Callable[[], bytes]) -> bytes:
        """Return the cached response for this payload, calling out on a miss.

        Only successful calls are stored; a remote failure with a cold cache
        propagates unchanged.
        """
        key = self.key_for(key_payload)
        cached = self.get(key)
        if cached is not None:
            return cached
        value = remote()
        if not isinstance(value, bytes):
            raise CacheError("remote callable must return bytes")
        self.put(key, value)
        return value


def cache_get_or_call(
    cache: ResponseCache, key_payload: bytes, remote: Callable[[], bytes]
) -> bytes:
    return cache.get_or_call(key_payload, remote)
