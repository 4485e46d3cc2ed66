import json

import pytest

from textdp.corpus import TokenKind, write_output_corpus
from textdp.errors import SpecValidationError, StoreMissingError
from textdp.evaluation import score_leakage_corpus
from textdp.mechanisms import MetricDpConfig, RantextConfig
from textdp.pipeline import (
    MaskStage,
    PipelineSpec,
    PrivatizeStage,
    run_pipeline,
    spec_hash,
    validate_spec,
)
from textdp.synth import SynthConfig, build_synthetic_store, corpus_vocab, generate, write_synth


@pytest.fixture(scope="module")
def corpus_and_store(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    result = generate(SynthConfig(n_docs=6, target_words=6_000, seed=21))
    paths = write_synth(result, tmp)
    store = build_synthetic_store(corpus_vocab(result.docs), seed=21)
    return result, paths, store


def gold_mask_stage(paths):
    return MaskStage(annotations_path=str(paths["pii"]), threshold=0.0)


def test_gold_mask_pipeline_zero_leakage(corpus_and_store):
    result, paths, _ = corpus_and_store
    spec = PipelineSpec(pipeline_id="gold_mask", stages=[gold_mask_stage(paths)])
    outputs, run = run_pipeline(result.docs, spec, master_seed=1)
    assert all(s == "ok" for s in run.doc_status.values())
    report = score_leakage_corpus(outputs, result.pii_spans)
    assert report.pct_total == 0.0
    placeholders = sum(t.kind is TokenKind.PLACEHOLDER for d in outputs for t in d.tokens)
    assert placeholders == len(result.pii_spans)


def test_privatize_deterministic(corpus_and_store):
    result, _, store = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="dp",
        stages=[PrivatizeStage(config=MetricDpConfig(epsilon=16.0))],
    )
    out1, run1 = run_pipeline(result.docs, spec, master_seed=7, store=store)
    out2, run2 = run_pipeline(result.docs, spec, master_seed=7, store=store)
    assert run1.output_sha256 == run2.output_sha256
    assert [t.text for d in out1 for t in d.tokens] == [t.text for d in out2 for t in d.tokens]
    out3, run3 = run_pipeline(result.docs, spec, master_seed=8, store=store)
    assert run3.output_sha256 != run1.output_sha256


def test_output_files_byte_identical(corpus_and_store, tmp_path):
    result, _, store = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="dp",
        stages=[PrivatizeStage(config=RantextConfig(epsilon=32.0, k_max=128))],
    )
    files = []
    for name in ("a.jsonl", "b.jsonl"):
        outputs, _ = run_pipeline(result.docs, spec, master_seed=3, store=store)
        path = tmp_path / name
        write_output_corpus(outputs, path)
        files.append(path.read_bytes())
    assert files[0] == files[1]


def test_masked_then_privatize_preserves_placeholders(corpus_and_store):
    result, paths, store = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="hybrid",
        stages=[gold_mask_stage(paths), PrivatizeStage(config=MetricDpConfig(epsilon=8.0))],
    )
    masked_only = PipelineSpec(pipeline_id="mask", stages=[gold_mask_stage(paths)])
    hybrid_out, _ = run_pipeline(result.docs, spec, master_seed=5, store=store)
    mask_out, _ = run_pipeline(result.docs, masked_only, master_seed=5)

    def placeholder_multiset(docs):
        out = {}
        for d in docs:
            for t in d.tokens:
                if t.kind is TokenKind.PLACEHOLDER:
                    out[t.text] = out.get(t.text, 0) + 1
        return out

    assert placeholder_multiset(hybrid_out) == placeholder_multiset(mask_out)


def test_hybrid_dominates_dp_only(corpus_and_store):
    """leakage(mask -> DP) <= leakage(DP only) at every epsilon, per seed."""
    result, paths, store = corpus_and_store
    grid = [8.0, 64.0, 1024.0]
    for mech in (
        lambda e: MetricDpConfig(epsilon=e),
        lambda e: RantextConfig(epsilon=e, k_max=128),
    ):
        for seed in range(5):
            for eps in grid:
                dp_only = PipelineSpec(
                    pipeline_id="dp", stages=[PrivatizeStage(config=mech(eps))]
                )
                hybrid = PipelineSpec(
                    pipeline_id="hybrid",
                    stages=[gold_mask_stage(paths), PrivatizeStage(config=mech(eps))],
                )
                out_dp, _ = run_pipeline(result.docs, dp_only, master_seed=seed, store=store)
                out_hy, _ = run_pipeline(result.docs, hybrid, master_seed=seed, store=store)
                leak_dp = score_leakage_corpus(out_dp, result.pii_spans).pct_total
                leak_hy = score_leakage_corpus(out_hy, result.pii_spans).pct_total
                assert leak_hy <= leak_dp


def test_document_independence_under_permutation(corpus_and_store):
    result, _, store = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="dp", stages=[PrivatizeStage(config=MetricDpConfig(epsilon=16.0))]
    )
    forward, _ = run_pipeline(result.docs, spec, master_seed=2, store=store)
    backward, _ = run_pipeline(list(reversed(result.docs)), spec, master_seed=2, store=store)
    by_id = {d.doc_id: d for d in backward}
    for doc in forward:
        assert [t.text for t in doc.tokens] == [t.text for t in by_id[doc.doc_id].tokens]


def test_jobs_parallelism_is_deterministic(corpus_and_store):
    result, _, store = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="dp", stages=[PrivatizeStage(config=MetricDpConfig(epsilon=16.0))]
    )
    seq, run_seq = run_pipeline(result.docs, spec, master_seed=4, store=store, jobs=1)
    par, run_par = run_pipeline(result.docs, spec, master_seed=4, store=store, jobs=4)
    assert run_seq.output_sha256 == run_par.output_sha256
    assert [d.doc_id for d in par] == [d.doc_id for d in seq]


def test_oov_pass_through(corpus_and_store):
    result, _, _ = corpus_and_store
    vocab = corpus_vocab(result.docs)
    missing = {t.text for t in result.docs[0].tokens if t.kind is TokenKind.WORD}
    partial_vocab = [w for w in vocab if w not in missing]
    # keep enough vocabulary for a valid store
    small_store = build_synthetic_store(partial_vocab, seed=1)
    spec = PipelineSpec(
        pipeline_id="dp", stages=[PrivatizeStage(config=MetricDpConfig(epsilon=8.0))]
    )
    outputs, run = run_pipeline(result.docs, spec, master_seed=1, store=small_store)
    assert run.oov_count >= len([t for t in result.docs[0].tokens if t.kind is TokenKind.WORD])
    # OOV tokens emitted unchanged
    out0 = next(d for d in outputs if d.doc_id == result.docs[0].doc_id)
    for orig, new in zip(result.docs[0].tokens, out0.tokens):
        if orig.text in missing:
            assert new.text == orig.text


def test_rules_mask_stage_through_pipeline(tmp_path, corpus_and_store):
    result, _, _ = corpus_and_store
    rules_file = tmp_path / "rules.json"
    rules_file.write_text(
        json.dumps(
            [
                {"category": "TELNR", "regex": r"\b0\d[\d-]{7,}\d\b"},
                {"category": "GEBOORTEDATUM", "regex": r"\b\d{2}-\d{2}-\d{4}\b"},
            ]
        ),
        encoding="utf-8",
    )
    spec = PipelineSpec(pipeline_id="rules", stages=[MaskStage(rules_path=str(rules_file))])
    outputs, run = run_pipeline(result.docs, spec, master_seed=1)
    assert all(s == "ok" for s in run.doc_status.values())
    phone_or_date = [
        s for s in result.pii_spans if s.category in ("TELNR", "GEBOORTEDATUM")
    ]
    assert phone_or_date, "fixture should plant phones/dates"
    report = score_leakage_corpus(outputs, phone_or_date)
    assert report.pct_total == 0.0


def test_validate_spec_rules():
    dp = PrivatizeStage(config=MetricDpConfig(epsilon=1.0))
    mask = MaskStage(rules_path="rules.json")

    diags = validate_spec(PipelineSpec(pipeline_id="p", stages=[dp, dp]))
    assert any(d.severity == "error" and "one privatize" in d.message for d in diags)

    diags = validate_spec(PipelineSpec(pipeline_id="p", stages=[]))
    assert any(d.severity == "error" for d in diags)

    diags = validate_spec(PipelineSpec(pipeline_id="p", stages=[dp, mask]))
    assert any(d.severity == "warning" and "not studied" in d.message for d in diags)

    diags = validate_spec(
        PipelineSpec(pipeline_id="p", stages=[dp], oov_policy="nearest_in_vocab")
    )
    assert any(d.severity == "error" and "nearest_in_vocab" in d.message for d in diags)

    bad_mask = MaskStage(rules_path="a", annotations_path="b")
    diags = validate_spec(PipelineSpec(pipeline_id="p", stages=[bad_mask]))
    assert any("exactly one" in d.message for d in diags)


def test_validate_spec_never_raises():
    weird = PipelineSpec(pipeline_id="p", stages=[], oov_policy="banana")
    diags = validate_spec(weird)
    assert all(d.severity in ("error", "warning") for d in diags)


def test_run_pipeline_rejects_invalid_spec(corpus_and_store):
    result, _, store = corpus_and_store
    dp = PrivatizeStage(config=MetricDpConfig(epsilon=1.0))
    with pytest.raises(SpecValidationError):
        run_pipeline(result.docs, PipelineSpec(pipeline_id="p", stages=[dp, dp]), 1, store=store)


def test_run_pipeline_requires_store(corpus_and_store):
    result, _, _ = corpus_and_store
    spec = PipelineSpec(
        pipeline_id="dp", stages=[PrivatizeStage(config=MetricDpConfig(epsilon=1.0))]
    )
    with pytest.raises(StoreMissingError):
        run_pipeline(result.docs, spec, master_seed=1, store=None)


def test_spec_json_round_trip(tmp_path, corpus_and_store):
    _, paths, _ = corpus_and_store
    spec_file = tmp_path / "spec.json"
    spec_file.write_text(
        json.dumps(
            {
                "pipeline_id": "hybrid_rantext",
                "stages": [
                    {"type": "mask", "annotations": str(paths["pii"]), "threshold": 0.25},
                    {
                        "type": "privatize",
                        "mechanism": "rantext",
                        "epsilon": 64.0,
                        "rantext": {"rho": 0.4, "k0": 30, "k_min": 5, "k_max": 100},
                    },
                ],
                "preserve_placeholders": True,
                "oov_policy": "pass_through",
            }
        ),
        encoding="utf-8",
    )
    spec = PipelineSpec.from_file(spec_file)
    assert spec.pipeline_id == "hybrid_rantext"
    assert isinstance(spec.stages[0], MaskStage)
    assert spec.stages[0].threshold == 0.25
    cfg = spec.stages[1].config
    assert isinstance(cfg, RantextConfig)
    assert cfg.rho == 0.4 and cfg.k0 == 30
    assert spec_hash(spec) == spec_hash(PipelineSpec.from_dict(spec.to_dict()))


def test_with_epsilon_swaps_budget():
    spec = PipelineSpec(
        pipeline_id="dp",
        stages=[PrivatizeStage(config=RantextConfig(epsilon=8.0, rho=0.3, k_max=100))],
    )
    swapped = spec.with_epsilon(512.0)
    cfg = swapped.privatize_stage().config
    assert cfg.epsilon == 512.0
    assert cfg.rho == 0.3
    assert spec.privatize_stage().config.epsilon == 8.0  # original untouched


def test_failed_document_recorded_not_fatal(corpus_and_store, monkeypatch):
    result, _, store = corpus_and_store
    from textdp import pipeline as pl

    original = pl._StageRunner._privatize_doc

    def flaky(self, doc, config, master_seed):
        if doc.doc_id == result.docs[1].doc_id:
            raise pl.TextDpError("boom")
        return original(self, doc, config, master_seed)

    monkeypatch.setattr(pl._StageRunner, "_privatize_doc", flaky)
    spec = PipelineSpec(
        pipeline_id="dp", stages=[PrivatizeStage(config=MetricDpConfig(epsilon=8.0))]
    )
    outputs, run = run_pipeline(result.docs, spec, master_seed=1, store=store)
    assert run.doc_status[result.docs[1].doc_id].startswith("error:")
    assert sum(1 for s in run.doc_status.values() if s == "ok") == len(result.docs) - 1
    assert len(outputs) == len(result.docs)
