import json

import pytest

from synthq.corpus import (
    CacheError,
    CorpusError,
    Document,
    ResponseCache,
    SyntheticQuerySet,
    canonical_payload,
    human_query_map,
    load_documents,
    load_human_queries,
    load_pairs,
    load_query_sets,
    save_pairs,
    save_query_sets,
)
from synthq.weighting import WeightedPair


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


def test_load_documents_in_order(tmp_path):
    path = tmp_path / "docs.jsonl"
    write_jsonl(
        path,
        [
            {"id": "d1", "text": "first doc"},
            {"id": "d2", "text": "second doc", "language": "fr"},
            {"id": "d3", "text": "third doc", "group_id": "book-a"},
        ],
    )
    docs = load_documents(path)
    assert [d.id for d in docs] == ["d1", "d2", "d3"]
    assert docs[1].language == "fr"
    assert docs[2].group_id == "book-a"
    assert docs == load_documents(path)  # deterministic


def test_load_documents_duplicate_id(tmp_path):
    path = tmp_path / "docs.jsonl"
    write_jsonl(
        path,
        [
            {"id": "d1", "text": "one"},
            {"id": "d2", "text": "two"},
            {"id": "d3", "text": "three"},
            {"id": "d1", "text": "again"},
        ],
    )
    with pytest.raises(CorpusError, match=r"duplicate id d1 \(line 4\)"):
        load_documents(path)


def test_load_documents_malformed_line(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text('{"id": "d1", "text": "ok"}\nnot json\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="line 2"):
        load_documents(path)


def test_load_documents_limit_prefix(tmp_path):
    path = tmp_path / "docs.jsonl"
    write_jsonl(path, [{"id": f"d{i}", "text": f"text {i}"} for i in range(50)])
    docs = load_documents(path, limit=8)
    assert len(docs) == 8
    assert [d.id for d in docs] == [f"d{i}" for i in range(8)]


def test_document_validation():
    with pytest.raises(CorpusError):
        Document(id="", text="x")
    with pytest.raises(CorpusError):
        Document(id="d", text="   ")


def test_human_queries_roundtrip(tmp_path):
    path = tmp_path / "human.jsonl"
    write_jsonl(
        path,
        [
            {"doc_id": "d1", "text": "what is rba"},
            {"doc_id": "d2", "text": "second question"},
            {"doc_id": "d1", "text": "later duplicate"},
        ],
    )
    queries = load_human_queries(path)
    assert len(queries) == 3
    mapping = human_query_map(queries)
    assert mapping == {"d1": "what is rba", "d2": "second question"}


def test_query_sets_roundtrip(tmp_path):
    sets = [
        SyntheticQuerySet(
            doc_id="d1",
            mode="diverse",
            queries=["q one", "q two"],
            generator_id="model-x",
            prompt_hash="abc",
        )
    ]
    path = tmp_path / "synthetic.jsonl"
    save_query_sets(sets, path)
    assert load_query_sets(path) == sets


def test_query_set_validation():
    with pytest.raises(CorpusError):
        SyntheticQuerySet(doc_id="d", mode="creative", queries=["q"], generator_id="m", prompt_hash="h")
    with pytest.raises(CorpusError):
        SyntheticQuerySet(doc_id="d", mode="diverse", queries=[], generator_id="m", prompt_hash="h")


def test_pairs_roundtrip(tmp_path):
    pairs = [
        WeightedPair(query="q1", doc_id="d1", weight=1.0, raw_cw=4),
        WeightedPair(query="q2", doc_id="d2", weight=0.5, aug_query="why q2"),
    ]
    path = tmp_path / "pairs.jsonl"
    save_pairs(pairs, path, doc_ids={"d1", "d2"})
    assert load_pairs(path) == pairs


def test_pairs_empty_roundtrip(tmp_path):
    path = tmp_path / "pairs.jsonl"
    save_pairs([], path)
    assert path.read_text(encoding="utf-8") == ""
    assert load_pairs(path) == []


def test_pairs_unknown_doc(tmp_path):
    with pytest.raises(CorpusError, match="unknown doc dX"):
        save_pairs([WeightedPair(query="q", doc_id="dX")], tmp_path / "p.jsonl", doc_ids={"d1"})


def test_cache_hit_skips_remote(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    calls = []

    def remote():
        calls.append(1)
        return b"response-bytes"

    payload = canonical_payload({"endpoint": "e", "body": {"a": 1}})
    first = cache.get_or_call(payload, remote)
    second = cache.get_or_call(payload, remote)
    assert first == second == b"response-bytes"
    assert len(calls) == 1


def test_cache_distinct_payloads_distinct_keys(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    k1 = cache.key_for(b"payload-a")
    k2 = cache.key_for(b"payload-b")
    assert k1 != k2
    cache.put(k1, b"one")
    cache.put(k2, b"two")
    assert cache.get(k1) == b"one"
    assert cache.get(k2) == b"two"


def test_cache_cold_after_delete(tmp_path):
    import shutil

    root = tmp_path / "cache"
    cache = ResponseCache(root)
    calls = []

    def remote():
        calls.append(1)
        return b"v"

    payload = b"p"
    cache.get_or_call(payload, remote)
    shutil.rmtree(root)
    cache.get_or_call(payload, remote)
    assert len(calls) == 2


def test_cache_remote_error_propagates(tmp_path):
    cache = ResponseCache(tmp_path / "cache")

    def remote():
        raise RuntimeError("remote down")

    with pytest.raises(RuntimeError, match="remote down"):
        cache.get_or_call(b"p", remote)
    # nothing was cached
    assert cache.get(cache.key_for(b"p")) is None


def test_cache_corruption_is_an_error(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    key = cache.key_for(b"p")
    cache.put(key, b"value")
    path = cache._path(key)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CacheError, match="corrupt"):
        cache.get(key)


def test_cache_layout_uses_key_prefix(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    key = cache.key_for(b"payload")
    cache.put(key, b"v")
    assert (tmp_path / "cache" / key[:2] / f"{key}.bin").exists()


def test_canonical_payload_is_stable():
    a = canonical_payload({"b": 1, "a": [2, 3]})
    b = canonical_payload({"a": [2, 3], "b": 1})
    assert a == b == b'{"a":[2,3],"b":1}'
