"""Shared fixtures: a fixture LLM server and the training mini-corpus."""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from synthq.corpus import Document
from synthq.weighting import WeightedPair

_M_RE = re.compile(r"Generate (\d+) queries")
_DOC_RE = re.compile(r"Document\(s\): (.*)\nGenerate", re.DOTALL)


def default_completion(payload: dict) -> str:
    """Emit exactly M numbered queries derived from the prompt's document."""
    prompt = payload["messages"][0]["content"]
    m = int(_M_RE.search(prompt).group(1))
    doc_text = _DOC_RE.search(prompt).group(1)
    words = doc_text.split() or ["thing"]
    lines = []
    for i in range(1, m + 1):
        word = words[(i - 1) % len(words)]
        lines.append(f"{i}. What about {word} number {i}?")
    return "\n".join(lines)


class FixtureLLM:
    """In-process OpenAI-compatible chat endpoint with request capture."""

    def __init__(self):
        self.requests: list[dict] = []
        self.completion_fn = default_completion
        self.fail_status: int | None = None
        self.fail_when = None  # optional predicate(payload) -> bool
        self._lock = threading.Lock()

        fixture = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                with fixture._lock:
                    fixture.requests.append(payload)
                should_fail = fixture.fail_status is not None and (
                    fixture.fail_when is None or fixture.fail_when(payload)
                )
                if should_fail:
                    self.send_response(fixture.fail_status)
                    self.end_headers()
                    return
                body = json.dumps(
                    {
                        "choices": [
                            {
                                "message": {
                                    "role": "assistant",
                                    "content": fixture.completion_fn(payload),
                                }
                            }
                        ]
                    }
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def reset(self) -> None:
        with self._lock:
            self.requests.clear()
        self.completion_fn = default_completion
        self.fail_status = None
        self.fail_when = None

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture(scope="session")
def llm_server():
    server = FixtureLLM()
    yield server
    server.close()


@pytest.fixture()
def llm(llm_server):
    llm_server.reset()
    return llm_server


def make_mini_corpus(
    n_docs: int = 200,
    vocab_size: int = 120,
    words_per_doc: int = 4,
    seed: int = 13,
) -> tuple[list[Document], list[WeightedPair]]:
    """Seeded retrieval corpus with template-derived keyword queries.

    Query tokens are aliases of document tokens (disjoint vocabularies), so
    an untrained encoder ranks near-randomly while a trained one can align
    the alias and topic feature spaces.
    """
    rng = np.random.default_rng(seed)
    vocab = [f"topic{i:03d}" for i in range(vocab_size)]
    docs: list[Document] = []
    pairs: list[WeightedPair] = []
    for d in range(n_docs):
        words = [vocab[w] for w in rng.choice(vocab_size, size=words_per_doc, replace=False)]
        doc = Document(id=f"d{d:04d}", text=" ".join(words))
        docs.append(doc)
        alias = [w.replace("topic", "ask") for w in words]
        queries = (
            f"{alias[0]} {alias[1]}",
            f"{alias[2]} {alias[3]}",
            f"{alias[0]} {alias[3]}",
        )
        pairs.extend(WeightedPair(query=q, doc_id=doc.id) for q in queries)
    return docs, pairs


@pytest.fixture(scope="session")
def mini_corpus():
    return make_mini_corpus()
