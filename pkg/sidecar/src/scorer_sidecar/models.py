"""Model backends for the scoring sidecar.

Three roles: text embedders (unit-norm vectors), pair scorers (floats in
[0, 1]), and word segmenters for languages without whitespace boundaries.
Each role has a dependency-free local implementation plus an adapter for
real model checkpoints, selected by model id.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol, Sequence

import numpy as np

LOCAL_EMBED_MODEL = "local/hash-embed-256"
LOCAL_CE_MODEL = "local/token-overlap-ce"

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class ModelLoadError(RuntimeError):
    pass


class Embedder(Protocol):
    model_id: str
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class PairScorer(Protocol):
    model_id: str

    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


class HashEmbedder:
    """Deterministic hashed n-gram embedder; no model weights required."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.model_id = LOCAL_EMBED_MODEL

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            toks = _TOKEN_RE.findall(text.lower())
            grams = toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
            for gram in grams:
                digest = hashlib.blake2b(
                    gram.encode("utf-8"), digest_size=8, key=b"sidecar"
                ).digest()
                bucket = int.from_bytes(digest[:4], "big") % self.dim
                out[row, bucket] += 1.0 if digest[4] & 1 else -1.0
            if not np.any(out[row]):
                out[row, 0] = 1.0
        return out / np.linalg.norm(out, axis=1, keepdims=True)


class SentenceTransformerEmbedder:
    """Adapter for sentence-transformers checkpoints (e.g. BAAI/bge-m3)."""

    def __init__(self, model_id: str):
        self.model_id = model_id
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError("sentence-transformers is not installed") from exc
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:
            raise ModelLoadError(f"could not load {model_id}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vecs = self._model.encode(
            list(texts), normalize_embeddings=True, convert_to_numpy=True
        )
        return np.asarray(vecs, dtype=np.float64)


class TokenOverlapScorer:
    """Jaccard token overlap as a paraphrase probability; identical -> 1.0."""

    def __init__(self):
        self.model_id = LOCAL_CE_MODEL

    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        scores = []
        for a, b in pairs:
            ta = set(_TOKEN_RE.findall(a.lower()))
            tb = set(_TOKEN_RE.findall(b.lower()))
            if not ta and not tb:
                scores.append(1.0)
            elif not ta or not tb:
                scores.append(0.0)
            else:
                scores.append(len(ta & tb) / len(ta | tb))
        return scores


class CrossEncoderScorer:
    """Adapter for sentence-transformers cross-encoder checkpoints."""

    def __init__(self, model_id: str):
        self.model_id = model_id
        try:
            from sentence_transformers import CrossEncoder
        except ImportError as exc:
            raise ModelLoadError("sentence-transformers is not installed") from exc
        try:
            self._model = CrossEncoder(model_id)
        except Exception as exc:
            raise ModelLoadError(f"could not load {model_id}: {exc}") from exc

    def score(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        raw = np.asarray(self._model.predict([list(p) for p in pairs]), dtype=np.float64)
        if raw.ndim > 1:
            raw = raw[:, -1]
        # map logits into probabilities when the head is unbounded
        if np.any(raw < 0.0) or np.any(raw > 1.0):
            raw = 1.0 / (1.0 + np.exp(-raw))
        return [float(v) for v in raw]


def make_embedder(model_id: str) -> Embedder:
    if model_id == LOCAL_EMBED_MODEL:
        return HashEmbedder()
    return SentenceTransformerEmbedder(model_id)


def make_pair_scorer(model_id: str) -> PairScorer:
    if model_id == LOCAL_CE_MODEL:
        return TokenOverlapScorer()
    return CrossEncoderScorer(model_id)


# Compact lexicons for the built-in longest-match fallback segmenters. A
# real deployment should install jieba/fugashi/kiwipiepy; the fallback only
# guarantees the segmentation contract (deterministic partition of the
# input), not linguistic quality.
_ZH_LEXICON = [
    "问责制", "为什么", "思维方式", "社区", "问题", "方法", "组织", "改善", "生活",
    "儿童", "家庭", "成年人", "青年", "使用", "可以", "一种", "方式", "思维", "我们",
    "他们", "什么", "哪里", "怎么", "是", "的", "和", "了", "在", "有", "也", "都",
    "不", "人", "中", "大", "小", "这", "那", "来", "去", "说", "对", "能", "会",
    "要", "就", "而", "与", "及", "它", "她", "他",
]
_JA_LEXICON = [
    "アカウンタビリティ", "コミュニティ", "について", "します", "された", "という",
    "ですか", "である", "します", "する", "した", "です", "ます", "から", "まで",
    "など", "これ", "それ", "あれ", "どの", "なぜ", "何", "は", "が", "を", "に",
    "で", "と", "の", "も", "や", "へ", "か", "な", "だ", "た", "て", "し",
]
_KO_LEXICON = [
    "커뮤니티", "책무성", "어떻게", "무엇을", "개선", "방법", "조직", "생활", "가족",
    "어린이", "사용", "합니다", "있습니다", "입니다", "하는", "이다", "있다", "하다",
    "그리고", "또한", "에서", "에게", "으로", "이", "가", "을", "를", "은", "는",
    "의", "에", "와", "과", "도", "로",
]

_FALLBACK_LEXICONS = {"zh": _ZH_LEXICON, "ja": _JA_LEXICON, "ko": _KO_LEXICON}
_PREFERRED_SEGMENTERS = {"zh": "jieba", "ja": "fugashi", "ko": "kiwipiepy"}

SUPPORTED_SEGMENT_LANGS = ("zh", "ja", "ko")


class LexiconSegmenter:
    """Greedy longest-match segmentation; unmatched characters stand alone.

    Every input partitions exactly: concatenating the tokens reproduces the
    original string.
    """

    def __init__(self, lang: str):
        words = _FALLBACK_LEXICONS[lang]
        self.model_id = f"{lang}:builtin-lexicon"
        self._words = set(words)
        self._max_len = max(len(w) for w in words)

    def segment(self, text: str) -> list[str]:
        tokens = []
        i = 0
        while i < len(text):
            match = None
            for length in range(min(self._max_len, len(text) - i), 1, -1):
                candidate = text[i : i + length]
                if candidate in self._words:
                    match = candidate
                    break
            if match is None:
                match = text[i]
            tokens.append(match)
            i += len(match)
        return tokens


class JiebaSegmenter:
    def __init__(self):
        import jieba

        self._jieba = jieba
        self.model_id = "zh:jieba"

    def segment(self, text: str) -> list[str]:
        return [tok for tok in self._jieba.lcut(text) if tok]


class FugashiSegmenter:
    def __init__(self):
        import fugashi

        self._tagger = fugashi.Tagger()
        self.model_id = "ja:fugashi"

    def segment(self, text: str) -> list[str]:
        return [word.surface for word in self._tagger(text)]


class KiwiSegmenter:
    def __init__(self):
        from kiwipiepy import Kiwi

        self._kiwi = Kiwi()
        self.model_id = "ko:kiwipiepy"

    def segment(self, text: str) -> list[str]:
        return [tok.form for tok in self._kiwi.tokenize(text)]


def make_segmenter(lang: str):
    """Prefer the language's standard segmenter, fall back to the lexicon."""
    if lang not in _FALLBACK_LEXICONS:
        raise ValueError(f"unsupported segmentation language {lang!r}")
    try:
        if lang == "zh":
            return JiebaSegmenter()
        if lang == "ja":
            return FugashiSegmenter()
        return KiwiSegmenter()
    except ImportError:
        return LexiconSegmenter(lang)
