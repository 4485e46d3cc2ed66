import numpy as np
import pytest

from textdp.categories import CATEGORIES
from textdp.corpus import load_annotations, load_corpus
from textdp.errors import InfeasibleConfigError, LexiconMissingError
from textdp.evaluation import load_entity_relations, score_leakage_corpus
from textdp.maskers import apply_annotations
from textdp.synth import (
    CLINICAL_MIX,
    SynthConfig,
    build_synthetic_store,
    corpus_vocab,
    generate,
    load_lexicons,
    write_synth,
)


def test_word_budget_within_band():
    result = generate(SynthConfig(n_docs=10, target_words=20_000, seed=1))
    assert abs(result.total_words - 20_000) / 20_000 < 0.05
    assert len(result.docs) == 10


def test_pii_rate_within_band():
    config = SynthConfig(n_docs=10, target_words=20_000, pii_rate=0.0083, seed=2)
    result = generate(config)
    assert 0.0066 <= result.realized_pii_rate <= 0.0100


def test_deterministic_under_seed():
    a = generate(SynthConfig(n_docs=4, target_words=3_000, seed=9))
    b = generate(SynthConfig(n_docs=4, target_words=3_000, seed=9))
    assert [d.source_text for d in a.docs] == [d.source_text for d in b.docs]
    assert a.pii_spans == b.pii_spans
    assert a.entities == b.entities
    assert a.relations == b.relations
    c = generate(SynthConfig(n_docs=4, target_words=3_000, seed=10))
    assert [d.source_text for d in c.docs] != [d.source_text for d in a.docs]


def test_span_text_matches_offsets():
    result = generate(SynthConfig(n_docs=5, target_words=6_000, seed=3))
    docs = {d.doc_id: d for d in result.docs}
    lex = load_lexicons()
    for span in result.pii_spans:
        surface = docs[span.doc_id].span_text(span.char_start, span.char_end)
        assert surface in lex.surfaces[span.category]
    for ent in result.entities:
        surface = docs[ent.doc_id].span_text(ent.char_start, ent.char_end)
        assert surface in lex.surfaces["DRUG" if ent.label == "drug" else "DISORDER"]


def test_all_categories_present_at_scale():
    result = generate(SynthConfig(n_docs=6, target_words=12_000, seed=4))
    seen = {s.category for s in result.pii_spans}
    assert seen == set(CATEGORIES)


def test_relations_reference_recorded_entities():
    result = generate(SynthConfig(n_docs=5, target_words=8_000, seed=5))
    ids = {e.entity_id for e in result.entities}
    assert result.relations, "expected planted relations"
    for rel in result.relations:
        assert rel.head_id in ids and rel.tail_id in ids
        assert rel.label in ("ADE", "INDICATION")


def test_clinical_mix_skews_allocation():
    result = generate(
        SynthConfig(n_docs=6, target_words=15_000, seed=6, category_mix=CLINICAL_MIX)
    )
    counts = {c: 0 for c in CATEGORIES}
    for s in result.pii_spans:
        counts[s.category] += 1
    assert counts["NAAM"] > 2 * counts["FEESTDAG"]


def test_perfect_mask_zero_leakage():
    result = generate(SynthConfig(n_docs=4, target_words=5_000, seed=7))
    by_doc = {}
    for s in result.pii_spans:
        by_doc.setdefault(s.doc_id, []).append(s)
    masked = [apply_annotations(d, by_doc.get(d.doc_id, [])) for d in result.docs]
    for granularity in ("whole_token", "subword"):
        report = score_leakage_corpus(masked, result.pii_spans, granularity)
        assert report.leaked_units == 0
        assert report.pct_total == 0.0


def test_infeasible_configs_rejected():
    with pytest.raises(InfeasibleConfigError):
        SynthConfig(pii_rate=0.5)
    with pytest.raises(InfeasibleConfigError):
        SynthConfig(pii_rate=0.0)
    with pytest.raises(InfeasibleConfigError):
        SynthConfig(n_docs=0)
    with pytest.raises(InfeasibleConfigError):
        SynthConfig(entity_rate=0.0)
    with pytest.raises(InfeasibleConfigError):
        SynthConfig(category_mix={"BOGUS": 1.0})


def test_missing_lexicon_dir():
    with pytest.raises(LexiconMissingError):
        load_lexicons("/nonexistent/path")


def test_write_synth_round_trips(tmp_path):
    result = generate(SynthConfig(n_docs=3, target_words=2_500, seed=8))
    paths = write_synth(result, tmp_path)
    docs = load_corpus(paths["corpus"])
    assert [d.doc_id for d in docs] == [d.doc_id for d in result.docs]
    assert [d.source_text for d in docs] == [d.source_text for d in result.docs]
    spans = load_annotations(paths["pii"], {d.doc_id: d for d in docs})
    assert len(spans) == len(result.pii_spans)
    entities, relations = load_entity_relations(paths["annotations"])
    assert len(entities) == len(result.entities)
    assert len(relations) == len(result.relations)


def test_store_covers_corpus_vocabulary():
    result = generate(SynthConfig(n_docs=3, target_words=2_500, seed=12))
    vocab = corpus_vocab(result.docs)
    store = build_synthetic_store(vocab, seed=12)
    assert len(store) == len(vocab)
    for doc in result.docs:
        for tok in doc.tokens:
            assert store.index_of(tok.text) is not None


def test_store_deterministic():
    vocab = [f"w{i}" for i in range(100)]
    a = build_synthetic_store(vocab, seed=1)
    b = build_synthetic_store(vocab, seed=1)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    c = build_synthetic_store(vocab, seed=2)
    assert not np.array_equal(a.matrix, c.matrix)
