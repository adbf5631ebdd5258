"""Multilingual tokenization, stopword tables, and the content-word count.

A query's complexity proxy is the number of unique non-stopword tokens
longer than one character. Token uniqueness is over NFKC-lowercased
surface forms; there is no stemming.
"""

from __future__ import annotations

import re
import unicodedata
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# Languages without whitespace word boundaries; regex splitting would return
# whole runs of characters as single "tokens".
_CJK_PRIMARY_TAGS = {"zh", "ja", "ko"}

# Interrogatives that widely-used stopword lists include for these languages.
# Filtering them deflates content-word counts for question-style text, so we
# warn when they show up in an active table.
_KNOWN_INTERROGATIVES = {
    "fr": {"quel", "quelle", "quels", "quelles", "comment", "pourquoi", "quand"},
    "zh": {"什么", "为什么", "哪里", "怎么"},
}

STRATEGIES = ("unicode_regex", "external_presegmented", "sidecar_segmenter")


class TokenizationError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerSpec:
    """How to split text for a given language.

    ``unicode_regex`` splits on Unicode word boundaries and is only valid for
    space-delimited languages; selecting it for zh/ja/ko requires
    ``allow_regex_for_cjk=True``. ``external_presegmented`` trusts whitespace
    already inserted upstream. ``sidecar_segmenter`` delegates to a scorer
    sidecar's /segment endpoint (``sidecar_url`` required).
    """

    language: str = "en"
    strategy: str = "unicode_regex"
    allow_regex_for_cjk: bool = False
    sidecar_url: str | None = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise TokenizationError(f"unknown tokenizer strategy {self.strategy!r}")

    @property
    def primary_tag(self) -> str:
        return self.language.split("-")[0].lower()


@dataclass(frozen=True)
class StopwordTable:
    language: str
    words: frozenset[str]

    def __post_init__(self) -> None:
        for w in self.words:
            if not w or w != normalize_token(w):
                raise TokenizationError(
                    f"stopword {w!r} is not a non-empty lowercase NFKC form"
                )

    def __contains__(self, token: str) -> bool:
        return token in self.words


def normalize_token(token: str) -> str:
    """NFKC-normalize and lowercase a token."""
    return unicodedata.normalize("NFKC", token).lower()


def tokenize(text: str, spec: TokenizerSpec) -> list[str]:
    """Split ``text`` into tokens according to ``spec``.

    The regex strategy lowercases and NFKC-normalizes; the presegmented
    strategy splits on whitespace and returns tokens verbatim.
    """
    if spec.strategy == "unicode_regex":
        if spec.primary_tag in _CJK_PRIMARY_TAGS and not spec.allow_regex_for_cjk:
            raise TokenizationError(
                f"unicode_regex is not a word segmenter for {spec.language!r}; "
                "use presegmented input, the sidecar segmenter, or set "
                "allow_regex_for_cjk=True to override"
            )
        return _WORD_RE.findall(normalize_token(text))
    if spec.strategy == "external_presegmented":
        return text.split()
    # sidecar_segmenter
    if not spec.sidecar_url:
        raise TokenizationError("sidecar_segmenter requires a sidecar_url")
    from .backends import SidecarBackend

    return SidecarBackend(spec.sidecar_url).segment([text], spec.primary_tag)[0]


def content_word_count(
    query: str, spec: TokenizerSpec, stopwords: StopwordTable
) -> int:
    """Count unique non-stopword tokens of length > 1 in ``query``.

    Length is in Unicode scalar values. Repeated content words count once,
    so the result is invariant under token reordering and duplication.
    """
    if stopwords.language.split("-")[0].lower() != spec.primary_tag:
        raise TokenizationError(
            f"stopword table language {stopwords.language!r} does not match "
            f"tokenizer language {spec.language!r}"
        )
    seen: set[str] = set()
    for token in tokenize(query, spec):
        norm = normalize_token(token)
        if len(norm) > 1 and norm not in stopwords:
            seen.add(norm)
    return len(seen)


def load_stopwords(language: str, stopwords_dir: str | Path | None = None) -> StopwordTable:
    """Load ``<lang>.txt`` from ``stopwords_dir`` or the bundled lists.

    Files hold one token per line; blank lines and ``#`` comments are
    ignored. Entries are NFKC-lowercased on load.
    """
    tag = language.split("-")[0].lower()
    if stopwords_dir is not None:
        path = Path(stopwords_dir) / f"{tag}.txt"
        if not path.is_file():
            raise TokenizationError(f"no stopword file {path}")
        text = path.read_text(encoding="utf-8")
    else:
        ref = resources.files("synthq") / "stopwords" / f"{tag}.txt"
        if not ref.is_file():
            raise TokenizationError(f"no bundled stopword list for {language!r}")
        text = ref.read_text(encoding="utf-8")

    words = set()
    for line in text.splitlines():
        entry = line.strip()
        if not entry or entry.startswith("#"):
            continue
        words.add(normalize_token(entry))
    table = StopwordTable(language=tag, words=frozenset(words))
    _warn_on_interrogatives(table)
    return table


def _warn_on_interrogatives(table: StopwordTable) -> None:
    flagged = _KNOWN_INTERROGATIVES.get(table.language, set()) & table.words
    if flagged:
        warnings.warn(
            f"stopword list for {table.language!r} contains interrogatives "
            f"{sorted(flagged)}; content-word counts of question-style text "
            "will be deflated",
            stacklevel=3,
        )
