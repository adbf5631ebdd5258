import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthq.tokenization import (
    StopwordTable,
    TokenizationError,
    TokenizerSpec,
    content_word_count,
    load_stopwords,
    tokenize,
)

EN = TokenizerSpec()


@pytest.fixture(scope="module")
def en_stopwords():
    return load_stopwords("en")


def test_tokenize_splits_and_lowercases():
    assert tokenize("What does Ivan promise?", EN) == ["what", "does", "ivan", "promise"]


def test_tokenize_empty():
    assert tokenize("", EN) == []


def test_tokenize_document_phrase():
    assert tokenize("RBA is used", EN) == ["rba", "is", "used"]


def test_tokenize_nfkc_normalizes():
    # fullwidth forms collapse to ascii under NFKC
    assert tokenize("Ｈｅｌｌｏ ｗｏｒｌｄ", EN) == ["hello", "world"]


def test_presegmented_splits_on_whitespace_only():
    spec = TokenizerSpec(language="zh", strategy="external_presegmented")
    assert tokenize("什么 是 社区 问责制", spec) == ["什么", "是", "社区", "问责制"]


def test_cjk_regex_requires_override():
    with pytest.raises(TokenizationError, match="not a word segmenter"):
        tokenize("这是一个测试", TokenizerSpec(language="zh"))
    forced = TokenizerSpec(language="zh", allow_regex_for_cjk=True)
    assert tokenize("这是一个测试", forced)  # runs, but returns whole runs


def test_sidecar_strategy_without_url_errors():
    with pytest.raises(TokenizationError, match="sidecar_url"):
        tokenize("text", TokenizerSpec(language="zh", strategy="sidecar_segmenter"))


def test_unknown_strategy_rejected():
    with pytest.raises(TokenizationError):
        TokenizerSpec(strategy="words")


def test_content_word_anchor(en_stopwords):
    query = "What does Ivan promise to do when he turns thirty?"
    assert content_word_count(query, EN, en_stopwords) == 4


def test_content_words_all_stopwords(en_stopwords):
    assert content_word_count("to do of the", EN, en_stopwords) == 0


def test_content_words_unique(en_stopwords):
    # brute-force set build as the oracle
    tokens = [t for t in tokenize("promise promise Ivan", EN)]
    expected = len({t for t in tokens if len(t) > 1 and t not in en_stopwords.words})
    assert expected == 2
    assert content_word_count("promise promise Ivan", EN, en_stopwords) == expected


def test_single_character_tokens_never_count(en_stopwords):
    assert content_word_count("x y z q", EN, en_stopwords) == 0


def test_language_mismatch_rejected(en_stopwords):
    with pytest.raises(TokenizationError, match="does not match"):
        content_word_count("bonjour", TokenizerSpec(language="fr"), en_stopwords)


def test_stopword_entries_validated():
    with pytest.raises(TokenizationError):
        StopwordTable(language="en", words=frozenset({"Mixed"}))
    with pytest.raises(TokenizationError):
        StopwordTable(language="en", words=frozenset({""}))


def test_load_stopwords_from_dir(tmp_path):
    (tmp_path / "xx.txt").write_text("# comment\nfoo\nBAR\n\n", encoding="utf-8")
    table = load_stopwords("xx", tmp_path)
    assert table.words == frozenset({"foo", "bar"})


def test_missing_stopword_file(tmp_path):
    with pytest.raises(TokenizationError, match="no stopword file"):
        load_stopwords("yy", tmp_path)


def test_interrogative_warning_for_french():
    with pytest.warns(UserWarning, match="interrogatives"):
        load_stopwords("fr")


def test_interrogative_warning_for_chinese():
    with pytest.warns(UserWarning, match="interrogatives"):
        load_stopwords("zh")


_words = st.lists(
    st.text(alphabet="abcdefghij", min_size=1, max_size=8), min_size=0, max_size=12
)


@settings(max_examples=200, deadline=None)
@given(words=_words, shuffle_seed=st.integers(0, 2**16))
def test_cw_permutation_and_duplication_invariant(words, shuffle_seed):
    import random

    table = load_stopwords("en")
    query = " ".join(words)
    base = content_word_count(query, EN, table)
    shuffled = list(words)
    random.Random(shuffle_seed).shuffle(shuffled)
    assert content_word_count(" ".join(shuffled), EN, table) == base
    assert content_word_count(query + " " + query, EN, table) == base
    assert 0 <= base <= len(tokenize(query, EN))


@settings(max_examples=100, deadline=None)
@given(words=_words, extra=st.sets(st.text(alphabet="abcdefghij", min_size=2, max_size=8)))
def test_cw_monotone_under_stopword_growth(words, extra):
    table = load_stopwords("en")
    bigger = StopwordTable(language="en", words=table.words | frozenset(extra))
    query = " ".join(words)
    assert content_word_count(query, EN, bigger) <= content_word_count(query, EN, table)
