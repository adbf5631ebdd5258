"""FastAPI application exposing /embed, /score-pairs, /segment, /healthz.

Model selection is environment-driven:

  SIDECAR_EMBED_MODEL   embedding checkpoint (default BAAI/bge-m3); the id
                        ``local/hash-embed-256`` selects the built-in
                        deterministic hash embedder
  SIDECAR_CE_MODEL      pair-score checkpoint (default: built-in
                        ``local/token-overlap-ce``)
  SIDECAR_BATCH_CEILING max texts/pairs per request (default 256)

Handlers are stateless and deterministic per request; a model that cannot
be loaded surfaces as 503 on its endpoints, never as a silent fallback.
"""

from __future__ import annotations

import os
import threading

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .models import (
    LOCAL_CE_MODEL,
    SUPPORTED_SEGMENT_LANGS,
    ModelLoadError,
    make_embedder,
    make_pair_scorer,
    make_segmenter,
)

DEFAULT_EMBED_MODEL = "BAAI/bge-m3"


class EmbedRequest(BaseModel):
    texts: list[str]


class PairScoreRequest(BaseModel):
    pairs: list[list[str]]


class SegmentRequest(BaseModel):
    texts: list[str]
    lang: str = Field(min_length=1)


class _LazySlot:
    """Thread-safe one-shot loader; a failed load is remembered as absent."""

    def __init__(self, factory):
        self._factory = factory
        self._lock = threading.Lock()
        self._value = None
        self._error: str | None = None

    def get(self):
        with self._lock:
            if self._value is None and self._error is None:
                try:
                    self._value = self._factory()
                except (ModelLoadError, Exception) as exc:
                    self._error = str(exc)
            if self._value is None:
                raise HTTPException(status_code=503, detail=f"model not loaded: {self._error}")
            return self._value


def create_app() -> FastAPI:
    embed_model = os.environ.get("SIDECAR_EMBED_MODEL", DEFAULT_EMBED_MODEL)
    ce_model = os.environ.get("SIDECAR_CE_MODEL", LOCAL_CE_MODEL)
    batch_ceiling = int(os.environ.get("SIDECAR_BATCH_CEILING", "256"))

    app = FastAPI(title="scorer-sidecar")
    embedder = _LazySlot(lambda: make_embedder(embed_model))
    scorer = _LazySlot(lambda: make_pair_scorer(ce_model))
    segmenters = {lang: _LazySlot(lambda lang=lang: make_segmenter(lang))
                  for lang in SUPPORTED_SEGMENT_LANGS}

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "embed_model": embed_model, "ce_model": ce_model}

    @app.post("/embed")
    def embed(request: EmbedRequest):
        if not request.texts:
            raise HTTPException(status_code=400, detail="texts must be non-empty")
        if len(request.texts) > batch_ceiling:
            raise HTTPException(status_code=413, detail=f"batch ceiling is {batch_ceiling}")
        model = embedder.get()
        vectors = model.embed(request.texts)
        return {
            "vectors": [[float(v) for v in row] for row in vectors],
            "dim": int(vectors.shape[1]),
            "model": model.model_id,
        }

    @app.post("/score-pairs")
    def score_pairs(request: PairScoreRequest):
        if not request.pairs:
            raise HTTPException(status_code=400, detail="pairs must be non-empty")
        if len(request.pairs) > batch_ceiling:
            raise HTTPException(status_code=413, detail=f"batch ceiling is {batch_ceiling}")
        if any(len(p) != 2 for p in request.pairs):
            raise HTTPException(status_code=400, detail="each pair needs exactly two texts")
        model = scorer.get()
        scores = model.score([(p[0], p[1]) for p in request.pairs])
        return {"scores": scores, "model": model.model_id}

    @app.post("/segment")
    def segment(request: SegmentRequest):
        lang = request.lang.split("-")[0].lower()
        if lang not in segmenters:
            raise HTTPException(
                status_code=400,
                detail=f"unsupported language {request.lang!r}; supported: "
                f"{', '.join(SUPPORTED_SEGMENT_LANGS)}",
            )
        model = segmenters[lang].get()
        return {"tokens": [model.segment(text) for text in request.texts]}

    return app


app = create_app()


def main() -> None:
    import uvicorn

    port = int(os.environ.get("SIDECAR_PORT", "8900"))
    uvicorn.run(app, host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
