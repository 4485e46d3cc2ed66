import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textdp.corpus import (
    Document,
    PiiSpan,
    TokenKind,
    filter_by_confidence,
    load_annotations,
    load_corpus,
    tokenize,
)
from textdp.errors import (
    InvalidThresholdError,
    ParseError,
    SpanOutOfBoundsError,
    UnknownCategoryError,
)

KIND = {"W": TokenKind.WORD, "P": TokenKind.PLACEHOLDER}


def test_fixture_cases(tokenizer_cases):
    for case in tokenizer_cases:
        tokens = tokenize(case["text"])
        assert [t.text for t in tokens] == case["tokens"], case["name"]
        assert [t.kind for t in tokens] == [KIND[k] for k in case["kinds"]], case["name"]
        if "offsets" in case:
            assert [[t.char_start, t.char_end] for t in tokens] == case["offsets"], case["name"]


def test_fixture_cases_structural_invariants(tokenizer_cases):
    for case in tokenizer_cases:
        tokens = tokenize(case["text"])
        raw = case["text"].encode("utf-8")
        prev_end = 0
        for t in tokens:
            assert t.char_start < t.char_end
            assert t.char_start >= prev_end
            # untransformed token text matches its source slice
            assert raw[t.char_start:t.char_end].decode("utf-8") == t.text
            prev_end = t.char_end


def test_round_trip_rebuilds_source(tokenizer_cases):
    for case in tokenizer_cases:
        doc = Document.from_text("d", case["text"])
        assert doc.render() == case["text"], case["name"]


@settings(max_examples=200)
@given(st.text(max_size=80))
def test_round_trip_property(text):
    doc = Document.from_text("d", text)
    assert doc.render() == text


@settings(max_examples=100)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60))
def test_tokenize_offsets_are_consistent(text):
    raw = text.encode("utf-8")
    for t in tokenize(text):
        assert raw[t.char_start:t.char_end].decode("utf-8") == t.text


def test_placeholder_closure():
    text = "Patient <NAAM> uit <STAD> zag dr. <ARTS>."
    doc = Document.from_text("d", text)
    again = tokenize(doc.render())
    assert [t.text for t in again] == [t.text for t in doc.tokens]
    assert [t.kind for t in again] == [t.kind for t in doc.tokens]


def test_empty_text():
    assert tokenize("") == []


# -- annotations -------------------------------------------------------------


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def test_load_annotations_direct_indirect(tmp_path):
    path = tmp_path / "ann.jsonl"
    write_jsonl(
        path,
        [
            {"doc_id": "d1", "start": 8, "end": 12, "category": "NAAM", "confidence": 0.93},
            {"doc_id": "d1", "start": 2, "end": 5, "category": "APOTHEEK", "confidence": 0.5},
        ],
    )
    spans = load_annotations(path)
    assert spans[0].directness.value == "direct"
    assert spans[1].directness.value == "indirect"


def test_load_annotations_unknown_category(tmp_path):
    path = tmp_path / "ann.jsonl"
    write_jsonl(path, [{"doc_id": "d1", "start": 0, "end": 3, "category": "FOO", "confidence": 1.0}])
    with pytest.raises(UnknownCategoryError):
        load_annotations(path)


def test_load_annotations_inverted_span(tmp_path):
    path = tmp_path / "ann.jsonl"
    write_jsonl(path, [{"doc_id": "d1", "start": 5, "end": 5, "category": "NAAM", "confidence": 1.0}])
    with pytest.raises(SpanOutOfBoundsError):
        load_annotations(path)


def test_load_annotations_bounds_checked_against_docs(tmp_path):
    path = tmp_path / "ann.jsonl"
    write_jsonl(path, [{"doc_id": "d1", "start": 0, "end": 999, "category": "NAAM", "confidence": 1.0}])
    docs = {"d1": Document.from_text("d1", "kort")}
    with pytest.raises(SpanOutOfBoundsError):
        load_annotations(path, docs)


def test_load_annotations_reports_line_number(tmp_path):
    path = tmp_path / "ann.jsonl"
    path.write_text('{"doc_id": "d1", "start": 0, "end": 3, "category": "NAAM"}\n{bad json\n', encoding="utf-8")
    with pytest.raises(ParseError, match=":2:"):
        load_annotations(path)


def test_load_corpus_duplicate_doc_id(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_jsonl(path, [{"doc_id": "d1", "text": "a"}, {"doc_id": "d1", "text": "b"}])
    with pytest.raises(ParseError, match="duplicate"):
        load_corpus(path)


# -- confidence filtering ------------------------------------------------------


def spans_with_conf(confs):
    return [
        PiiSpan(doc_id="d1", char_start=i * 10, char_end=i * 10 + 5, category="NAAM", confidence=c)
        for i, c in enumerate(confs)
    ]


def test_filter_by_confidence_basic():
    spans = spans_with_conf([0.2, 0.9])
    kept = filter_by_confidence(spans, 0.5)
    assert [s.confidence for s in kept] == [0.9]


def test_filter_threshold_zero_keeps_all():
    spans = spans_with_conf([0.0, 0.3, 1.0])
    assert filter_by_confidence(spans, 0.0) == spans


def test_filter_invalid_threshold():
    with pytest.raises(InvalidThresholdError):
        filter_by_confidence([], 1.0)
    with pytest.raises(InvalidThresholdError):
        filter_by_confidence([], -0.1)


def test_filter_matches_brute_force():
    import numpy as np

    rng = np.random.Generator(np.random.PCG64(1))
    spans = spans_with_conf(rng.random(1000).tolist())
    kept = filter_by_confidence(spans, 0.7)
    brute = [s for s in spans if s.confidence >= 0.7]
    assert kept == brute


@given(
    st.lists(st.floats(min_value=0.0, max_value=1.0), max_size=40),
    st.floats(min_value=0.0, max_value=0.99),
    st.floats(min_value=0.0, max_value=0.99),
)
def test_filter_idempotent_and_monotone(confs, t1, t2):
    spans = spans_with_conf(confs)
    once = filter_by_confidence(spans, t1)
    assert filter_by_confidence(once, t1) == once
    lo, hi = min(t1, t2), max(t1, t2)
    assert set(id(s) for s in filter_by_confidence(spans, hi)) <= set(
        id(s) for s in filter_by_confidence(spans, lo)
    )
