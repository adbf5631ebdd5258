"""Zero-shot multi-query generation against an OpenAI-compatible endpoint.

One chat-completion call per document returns M numbered queries; the
numbered list is parsed in order and truncated to the first M. A tuning
phase generates on a small document sample with each candidate prompt,
measures the diversity metrics, and picks the prompt matching the target
task profile.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass

import requests

from .backends import ScorerBackend
from .corpus import Document, ResponseCache, SyntheticQuerySet, canonical_payload
from .tokenization import TokenizerSpec

TUNE_THRESHOLD = 0.5
TARGETS = ("in_domain", "ood")


class GenerationError(RuntimeError):
    pass


class RetryableHTTPError(GenerationError):
    pass


class ParseError(GenerationError):
    def __init__(self, found: int, needed: int):
        self.found = found
        self.needed = needed
        plural = "" if found == 1 else "s"
        super().__init__(f"found {found} item{plural}, need {needed}")


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with {M} and {document} placeholders."""

    mode: str  # diverse | paraphrase
    body: str

    def digest(self) -> str:
        payload = f"{self.mode}\x00{self.body}".encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


DIVERSE_TEMPLATE = PromptTemplate(
    mode="diverse",
    body=(
        "Your task is to generate {M} independent queries based on the document(s).\n"
        "You MUST generate queries in these specific formats:\n"
        "- What... questions (factual)\n"
        "- How... questions (procedural)\n"
        "- Why... questions (causal)\n"
        "- When/If... questions (conditional)\n"
        "- Keyword queries (2-5 words, no question mark)\n"
        '- Statement/claim format (e.g., "X is used for Y")\n'
        "- Which/Is it true... questions\n"
        "- Comparison or contrast questions\n"
        "Each query must target different information from the document.\n"
        "Document(s): {document}\n"
        "Generate {M} queries: 1."
    ),
)

PARAPHRASE_TEMPLATE = PromptTemplate(
    mode="paraphrase",
    body=(
        "Your task is to generate {M} paraphrase queries based on the document(s).\n"
        "- Identify ONE main question the document(s) answer\n"
        "- Then rephrase it {M} different ways\n"
        "All queries must ask the SAME question with DIFFERENT wording.\n"
        "Document(s): {document}\n"
        "Generate {M} queries: 1."
    ),
)

DEFAULT_TEMPLATES = {"diverse": DIVERSE_TEMPLATE, "paraphrase": PARAPHRASE_TEMPLATE}

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_]+)\}")


@dataclass(frozen=True)
class GenerationConfig:
    model: str
    M: int = 5
    temperature: float = 0.0
    max_retries: int = 2
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    api_key_env: str = "SYNTHQ_API_KEY"
    timeout: float = 120.0
    retry_backoff: float = 1.0  # seconds; doubles per attempt

    def __post_init__(self) -> None:
        if self.M < 1:
            raise GenerationError("M must be at least 1")
        if self.temperature < 0:
            raise GenerationError("temperature must be nonnegative")


@dataclass(frozen=True)
class PromptSelection:
    chosen_mode: str
    sample_ce: float
    sample_self_bleu: float
    target: str

    def __post_init__(self) -> None:
        if self.target not in TARGETS:
            raise SelectionError(f"unknown target {self.target!r}")
        if not _matches_target(self.sample_ce, self.sample_self_bleu, self.target):
            raise SelectionError(
                f"selection for target {self.target!r} violates the threshold rule: "
                f"CE={self.sample_ce:.3f}, Self-BLEU={self.sample_self_bleu:.3f}"
            )


def _matches_target(ce: float, self_bleu: float, target: str) -> bool:
    if target == "in_domain":
        return ce > TUNE_THRESHOLD and self_bleu > TUNE_THRESHOLD
    return ce < TUNE_THRESHOLD and self_bleu < TUNE_THRESHOLD


def render_prompt(template: PromptTemplate, m: int, document_text: str) -> str:
    """Substitute {M} and {document}; output is byte-deterministic."""
    if m < 1:
        raise GenerationError("M must be at least 1")
    if not document_text:
        raise GenerationError("document text must be non-empty")
    names = set(_PLACEHOLDER_RE.findall(template.body))
    extra = names - {"M", "document"}
    if extra:
        raise GenerationError(f"unresolved placeholder {sorted(extra)[0]!r} in template")
    if "M" not in names or "document" not in names:
        raise GenerationError("template must use both {M} and {document}")
    return template.body.replace("{M}", str(m)).replace("{document}", document_text)


_ITEM_RE = re.compile(r"^\s*\d+[.)]\s*(.*)$")


def parse_numbered_list(raw: str, m: int) -> list[str]:
    """Extract the first ``m`` numbered items from a completion, in order.

    The prompt ends with "1.", so a completion may start mid-item: a
    non-empty first line without a marker counts as item 1.
    """
    items: list[str] = []
    seen_nonempty = False
    for line in raw.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        match = _ITEM_RE.match(line)
        if match:
            text = match.group(1).strip()
            if text:
                items.append(text)
        elif not seen_nonempty:
            items.append(stripped)
        seen_nonempty = True
    if len(items) < m:
        raise ParseError(found=len(items), needed=m)
    return items[:m]


def _chat_payload(cfg: GenerationConfig, prompt: str) -> dict:
    return {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }


def _post_chat(cfg: GenerationConfig, payload: dict) -> bytes:
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    try:
        resp = requests.post(
            cfg.endpoint_url, json=payload, headers=headers, timeout=cfg.timeout
        )
    except requests.RequestException as exc:
        raise RetryableHTTPError(f"request to {cfg.endpoint_url} failed: {exc}") from exc
    if resp.status_code >= 500:
        raise RetryableHTTPError(f"HTTP {resp.status_code} from {cfg.endpoint_url}")
    if resp.status_code != 200:
        raise GenerationError(
            f"HTTP {resp.status_code} from {cfg.endpoint_url}: {resp.text[:200]}"
        )
    return resp.content


def _completion_text(raw: bytes) -> str:
    try:
        data = json.loads(raw)
        return data["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise GenerationError(f"malformed completion response: {exc}") from exc


def generate_query_set(
    doc: Document,
    cfg: GenerationConfig,
    template: PromptTemplate,
    cache: ResponseCache,
) -> SyntheticQuerySet:
    """Generate M queries for one document with a single completion call.

    The response is cached by (endpoint, payload); repeated runs replay from
    the cache with no network traffic. Underfull completions invalidate the
    cache entry and retry up to ``cfg.max_retries`` times with exponential
    backoff.
    """
    prompt = render_prompt(template, cfg.M, doc.text)
    payload = _chat_payload(cfg, prompt)
    key_payload = canonical_payload({"endpoint": cfg.endpoint_url, "payload": payload})
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt and cfg.retry_backoff > 0:
            time.sleep(cfg.retry_backoff * 2 ** (attempt - 1))
        try:
            raw = cache.get_or_call(key_payload, lambda: _post_chat(cfg, payload))
            queries = parse_numbered_list(_completion_text(raw), cfg.M)
            return SyntheticQuerySet(
                doc_id=doc.id,
                mode=template.mode,
                queries=queries,
                generator_id=cfg.model,
                prompt_hash=template.digest(),
            )
        except ParseError as exc:
            # a fresh attempt needs a fresh completion, not the cached one
            cache.delete(cache.key_for(key_payload))
            last_error = exc
        except RetryableHTTPError as exc:
            last_error = exc
    raise GenerationError(
        f"doc {doc.id}: giving up after {cfg.max_retries + 1} attempt(s): {last_error}"
    )


def tune_prompt(
    sample_docs: list[Document],
    candidates: list[PromptTemplate],
    target: str,
    cfg: GenerationConfig,
    backend: ScorerBackend,
    cache: ResponseCache,
    spec: TokenizerSpec | None = None,
) -> PromptSelection:
    """Pick the first candidate prompt whose sample diversity matches ``target``.

    Generates on the document sample with each candidate, measures the
    paraphrase ratio and self-BLEU, and applies the threshold rule
    (in_domain: both > 0.5; ood: both < 0.5; exactly 0.5 fails both).
    """
    from .qd_metrics import ce_ratio, corpus_self_bleu

    if target not in TARGETS:
        raise SelectionError(f"unknown target {target!r}")
    if not candidates:
        raise SelectionError("no candidate prompts")
    if len(sample_docs) < 2:
        raise SelectionError("prompt tuning needs at least 2 sample documents")
    spec = spec or TokenizerSpec()
    measurements: list[tuple[str, float, float]] = []
    for template in candidates:
        sets = [generate_query_set(d, cfg, template, cache) for d in sample_docs]
        ce = ce_ratio(sets, backend)
        sb = corpus_self_bleu(sets, spec)
        measurements.append((template.mode, ce, sb))
        if _matches_target(ce, sb, target):
            return PromptSelection(
                chosen_mode=template.mode, sample_ce=ce, sample_self_bleu=sb, target=target
            )
    detail = "; ".join(
        f"{mode}: CE={ce:.3f}, Self-BLEU={sb:.3f}" for mode, ce, sb in measurements
    )
    raise SelectionError(f"no candidate prompt matches target {target!r} ({detail})")


def build_dataset(
    docs: list[Document],
    template: PromptTemplate,
    cfg: GenerationConfig,
    cache: ResponseCache,
    failure_ceiling: float = 0.01,
) -> list[SyntheticQuerySet]:
    """Generate one query set per document, resumable through the cache.

    Per-document failures are collected; the run fails when the failure rate
    exceeds ``failure_ceiling``.
    """
    if not docs:
        raise GenerationError("no documents")
    sets: list[SyntheticQuerySet] = []
    failures: list[str] = []
    for doc in docs:
        try:
            sets.append(generate_query_set(doc, cfg, template, cache))
        except GenerationError as exc:
            failures.append(f"{doc.id}: {exc}")
    if failures and len(failures) / len(docs) > failure_ceiling:
        listing = "; ".join(failures[:10])
        raise GenerationError(
            f"generation failed for {len(failures)}/{len(docs)} documents "
            f"(ceiling {failure_ceiling:.0%}): {listing}"
        )
    return sets
