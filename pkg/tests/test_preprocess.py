"""Preprocessing chain: normalization, tokenization, stopwords, lemma, stem."""

from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctikit.errors import MissingResources
from ctikit.hashing import dedup_key
from ctikit.ingest import RawFeedRecord
from ctikit.langid import LanguageVerdict
from ctikit.pipeline import builtin_resources_dir
from ctikit.preprocess import (
    LanguageResources,
    available_languages,
    doc_from_json,
    doc_to_json,
    is_ioc_token,
    lemmatize,
    load_resources,
    normalize,
    preprocess_doc,
    read_docs_jsonl,
    remove_stopwords,
    stem,
    tokenize,
    write_docs_jsonl,
    write_tokens_parquet,
)


@pytest.fixture(scope="module")
def en():
    return load_resources(builtin_resources_dir(), "en")


def _record(text: str) -> RawFeedRecord:
    return RawFeedRecord(
        record_id=dedup_key(text),
        source_id="t",
        fetched_at=datetime(2024, 1, 1, tzinfo=timezone.utc),
        text=text,
        metadata={},
    )


class TestNormalize:
    def test_lowercase_and_punctuation_removal(self):
        assert normalize("This  Paper!!") == "this paper"

    def test_ioc_characters_survive(self):
        assert normalize("IP: 192.168.1.5") == "ip: 192.168.1.5"
        assert normalize("CVE-2024-1234 at http://evil.example/x_y@z") \
            == "cve-2024-1234 at http://evil.example/x_y@z"

    def test_empty(self):
        assert normalize("") == ""

    def test_control_chars_become_spaces(self):
        assert normalize("a\x00b\tc") == "a b c"

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=80))
    def test_idempotent(self, text):
        once = normalize(text)
        assert normalize(once) == once

    @settings(max_examples=200, deadline=None)
    @given(st.text(max_size=80))
    def test_no_removal_class_in_output(self, text):
        out = normalize(text)
        assert "  " not in out
        assert out == out.strip()


class TestTokenize:
    def test_plain_words(self):
        toks = tokenize("this paper is a conceptual")
        assert [t.surface for t in toks] == ["this", "paper", "is", "a", "conceptual"]

    def test_terminal_period_detached_ioc_intact(self):
        toks = tokenize("attack from 192.168.1.5.")
        assert [t.surface for t in toks] == ["attack", "from", "192.168.1.5", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_leading_colon_detached(self):
        toks = tokenize("note :value")
        assert [t.surface for t in toks] == ["note", ":", "value"]

    def test_cve_stays_intact(self):
        toks = tokenize("see cve-2024-12345: now")
        assert [t.surface for t in toks] == ["see", "cve-2024-12345", ":", "now"]

    def test_bare_dots(self):
        assert [t.surface for t in tokenize("..")] == [".", "."]

    def test_offsets_index_normalized_text(self):
        text = normalize("Attack from 192.168.1.5. Now!")
        for tok in tokenize(text):
            assert text[tok.char_start:tok.char_end] == tok.surface

    @settings(max_examples=300, deadline=None)
    @given(st.text(max_size=100))
    def test_offset_soundness_and_order(self, raw):
        text = normalize(raw)
        toks = tokenize(text)
        prev_end = -1
        for tok in toks:
            assert tok.char_start < tok.char_end
            assert tok.char_start > prev_end or prev_end == -1 or tok.char_start >= prev_end
            assert text[tok.char_start:tok.char_end] == tok.surface
            prev_end = tok.char_end
        # concatenating surfaces with the gaps reconstructs the text
        rebuilt = []
        cursor = 0
        for tok in toks:
            rebuilt.append(text[cursor:tok.char_start])
            rebuilt.append(tok.surface)
            cursor = tok.char_end
        rebuilt.append(text[cursor:])
        assert "".join(rebuilt) == text


def test_is_ioc_token():
    assert is_ioc_token("192.168.1.5")
    assert is_ioc_token("999.1.1.1")  # not an IPv4, but domain-shaped: stays one token
    assert is_ioc_token("cve-2024-1234")
    assert is_ioc_token("a" * 32)  # hex hash length
    assert is_ioc_token("evil.example")
    assert not is_ioc_token("word")


def test_strict_ipv4_octet_guard():
    from ctikit.preprocess import IPV4_RE

    assert IPV4_RE.fullmatch("192.168.1.5")
    assert IPV4_RE.fullmatch("255.255.255.255")
    assert not IPV4_RE.fullmatch("999.1.1.1")
    assert not IPV4_RE.fullmatch("1.2.3")
    assert not IPV4_RE.fullmatch("1.2.3.256")


class TestStopwordsLemmaStem:
    def test_paper_sentence_content_tokens(self, en):
        toks = remove_stopwords(tokenize(normalize("This paper is a conceptual")), en)
        content = {t.surface for t in toks if not t.is_stopword}
        assert content == {"paper", "conceptual"}
        assert len(toks) == 5  # flag-only removal keeps every token

    def test_empty_stoplist_flags_nothing(self):
        resources = LanguageResources("xx", frozenset(), {}, ())
        toks = remove_stopwords(tokenize("this is fine"), resources)
        assert not any(t.is_stopword for t in toks)

    def test_all_stopword_sentence(self, en):
        toks = remove_stopwords(tokenize("this is a the"), en)
        assert all(t.is_stopword for t in toks)
        assert len(toks) == 4

    def test_lemma_examples(self, en):
        assert lemmatize("running", en) == "run"
        assert lemmatize("zzzz", en) == "zzzz"
        assert lemmatize("", en) == ""

    def test_stem_examples(self, en):
        assert stem("running", en) == "runn"
        assert stem("sing", en) == "sing"  # remainder below min stem length
        assert stem("run", en) == "run"

    def test_stem_first_matching_rule_only(self):
        resources = LanguageResources(
            "xx", frozenset(), {}, (("ing", 3), ("ning", 1))
        )
        # "ing" matches first and wins even though "ning" also matches
        assert stem("running", resources) == "runn"

    def test_stem_never_longer(self, en):
        for word in ["running", "attacks", "a", "", "es", "breached"]:
            assert len(stem(word, en)) <= len(word)

    def test_stem_rule_validation(self):
        with pytest.raises(ValueError):
            LanguageResources("xx", frozenset(), {}, (("", 3),))
        with pytest.raises(ValueError):
            LanguageResources("xx", frozenset(), {}, (("ing", 0),))


class TestPreprocessDoc:
    def test_end_to_end_paper_sentence(self, en):
        doc = preprocess_doc(
            _record("This paper is a conceptual"),
            LanguageVerdict("en", 1.0),
            {"en": en},
        )
        assert doc.normalized_text == "this paper is a conceptual"
        assert len(doc.tokens) == 5
        assert sum(t.is_stopword for t in doc.tokens) == 3
        assert [t.lemma for t in doc.tokens] == [t.normalized for t in doc.tokens]

    def test_missing_resources(self, en):
        with pytest.raises(MissingResources):
            preprocess_doc(
                _record("texto sin recursos aqui"),
                LanguageVerdict("xx", 0.9),
                {"en": en},
                default_lang=None,
            )

    def test_und_routes_to_default(self, en):
        doc = preprocess_doc(
            _record("short txt"), LanguageVerdict("und", 0.0), {"en": en}, default_lang="en"
        )
        assert doc.lang == "en"

    def test_idempotent_on_normalized_text(self, en):
        text = "already normalized text 10.0.0.1"
        doc = preprocess_doc(
            _record(text), LanguageVerdict("en", 1.0), {"en": en}
        )
        assert doc.normalized_text == text

    def test_token_fields_fully_populated(self, en):
        doc = preprocess_doc(
            _record("APT41 attacks running servers at 10.0.0.1."),
            LanguageVerdict("en", 1.0),
            {"en": en},
        )
        for tok in doc.tokens:
            assert tok.normalized == tok.surface
            assert tok.lemma
            assert tok.stem
        by_surface = {t.surface: t for t in doc.tokens}
        assert by_surface["running"].lemma == "run"
        assert by_surface["running"].stem == "runn"
        assert by_surface["attacks"].lemma == "attack"


def test_available_languages_builtin():
    langs = available_languages(builtin_resources_dir())
    assert "en" in langs and "es" in langs


def test_doc_serialization_round_trip(tmp_path, en):
    docs = [
        preprocess_doc(_record(t), LanguageVerdict("en", 1.0), {"en": en})
        for t in ["APT41 breached the network.", "Files at 10.0.0.1: gone"]
    ]
    assert doc_from_json(doc_to_json(docs[0])) == docs[0]
    path = tmp_path / "docs.jsonl"
    write_docs_jsonl(docs, path)
    assert read_docs_jsonl(path) == docs


def test_tokens_parquet_written(tmp_path, en):
    pytest.importorskip("pyarrow")
    import pyarrow.parquet as pq

    docs = [
        preprocess_doc(_record("APT41 breached x"), LanguageVerdict("en", 1.0), {"en": en})
    ]
    path = tmp_path / "tokens.parquet"
    assert write_tokens_parquet(docs, path)
    table = pq.read_table(path)
    assert table.num_rows == len(docs[0].tokens)
    assert "char_start" in table.column_names
