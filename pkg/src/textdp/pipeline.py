"""Pipeline composition: masking stages followed by an optional DP stage.

A pipeline spec is an ordered stage list applied per document. Documents
are processed independently on deterministic per-document RNG streams, so
results do not depend on scheduling or corpus order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, PiiSpan, TokenKind, load_annotations
from .embeddings import EmbeddingStore
from .errors import SpecValidationError, StoreMissingError, TextDpError
from .maskers import MaskRule, apply_annotations, load_rules, rule_mask
from .mechanisms import (
    MechanismConfig,
    config_from_dict,
    config_to_dict,
    doc_rng,
    mechanism_name,
    privatize_tokens,
)

logger = logging.getLogger(__name__)

OOV_PASS_THROUGH = "pass_through"
OOV_NEAREST_IN_VOCAB = "nearest_in_vocab"


@dataclass
class MaskStage:
    rules_path: str | None = None
    annotations_path: str | None = None
    threshold: float = 0.0


@dataclass
class PrivatizeStage:
    config: MechanismConfig


Stage = MaskStage | PrivatizeStage


@dataclass
class PipelineSpec:
    pipeline_id: str
    stages: list[Stage]
    preserve_placeholders: bool = True
    oov_policy: str = OOV_PASS_THROUGH

    def privatize_stage(self) -> PrivatizeStage | None:
        for stage in self.stages:
            if isinstance(stage, PrivatizeStage):
                return stage
        return None

    def mechanism(self) -> str:
        stage = self.privatize_stage()
        return mechanism_name(stage.config) if stage else "none"

    def with_epsilon(self, epsilon: float) -> "PipelineSpec":
        """Copy of the spec with the privatize stage's budget replaced."""
        stages: list[Stage] = []
        for stage in self.stages:
            if isinstance(stage, PrivatizeStage):
                cfg = config_to_dict(stage.config)
                cfg["epsilon"] = float(epsilon)
                stages.append(PrivatizeStage(config=config_from_dict(cfg)))
            else:
                stages.append(stage)
        return PipelineSpec(
            pipeline_id=self.pipeline_id,
            stages=stages,
            preserve_placeholders=self.preserve_placeholders,
            oov_policy=self.oov_policy,
        )

    def to_dict(self) -> dict:
        stages = []
        for stage in self.stages:
            if isinstance(stage, MaskStage):
                obj: dict = {"type": "mask", "threshold": stage.threshold}
                if stage.rules_path:
                    obj["rules"] = stage.rules_path
                if stage.annotations_path:
                    obj["annotations"] = stage.annotations_path
                stages.append(obj)
            else:
                stages.append({"type": "privatize", **config_to_dict(stage.config)})
        return {
            "pipeline_id": self.pipeline_id,
            "stages": stages,
            "preserve_placeholders": self.preserve_placeholders,
            "oov_policy": self.oov_policy,
        }

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | Path | None = None) -> "PipelineSpec":
        def resolve(p: str | None) -> str | None:
            if p is None or base_dir is None:
                return p
            path = Path(p)
            return str(path if path.is_absolute() else Path(base_dir) / path)

        stages: list[Stage] = []
        for raw in obj.get("stages", []):
            kind = raw.get("type")
            if kind == "mask":
                stages.append(
                    MaskStage(
                        rules_path=resolve(raw.get("rules")),
                        annotations_path=resolve(raw.get("annotations")),
                        threshold=float(raw.get("threshold", 0.0)),
                    )
                )
            elif kind == "privatize":
                stages.append(PrivatizeStage(config=config_from_dict(raw)))
            else:
                raise SpecValidationError(f"unknown stage type {kind!r}")
        return cls(
            pipeline_id=obj.get("pipeline_id", "pipeline"),
            stages=stages,
            preserve_placeholders=bool(obj.get("preserve_placeholders", True)),
            oov_policy=obj.get("oov_policy", OOV_PASS_THROUGH),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineSpec":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        spec = cls.from_dict(obj, base_dir=Path(path).parent)
        if spec.pipeline_id == "pipeline":
            spec.pipeline_id = Path(path).stem
        return spec


@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str


def validate_spec(spec: PipelineSpec, store: EmbeddingStore | None = None) -> list[Diagnostic]:
    """Structured diagnostics; never raises."""
    out: list[Diagnostic] = []
    if not spec.stages:
        out.append(Diagnostic("error", "pipeline has no stages"))
    privatize_positions = [i for i, s in enumerate(spec.stages) if isinstance(s, PrivatizeStage)]
    if len(privatize_positions) > 1:
        out.append(Diagnostic("error", "at most one privatize stage is allowed"))
    if privatize_positions:
        after = privatize_positions[-1]
        if any(isinstance(s, MaskStage) for s in spec.stages[after + 1:]):
            out.append(Diagnostic("warning", "mask after privatize: this stage order was not studied"))
    if spec.oov_policy == OOV_NEAREST_IN_VOCAB:
        out.append(
            Diagnostic(
                "error",
                "oov_policy nearest_in_vocab is unavailable: no per-occurrence embedding "
                "exists to place an out-of-vocabulary surface in the store",
            )
        )
    elif spec.oov_policy != OOV_PASS_THROUGH:
        out.append(Diagnostic("error", f"unknown oov_policy {spec.oov_policy!r}"))
    for stage in spec.stages:
        if isinstance(stage, MaskStage):
            if (stage.rules_path is None) == (stage.annotations_path is None):
                out.append(Diagnostic("error", "mask stage needs exactly one of rules/annotations"))
            if not 0.0 <= stage.threshold < 1.0:
                out.append(Diagnostic("error", f"threshold {stage.threshold} outside [0, 1)"))
        elif store is not None:
            cfg = stage.config
            if hasattr(cfg, "validate_against"):
                try:
                    cfg.validate_against(store)
                except TextDpError as exc:
                    out.append(Diagnostic("error", str(exc)))
    return out


@dataclass
class PipelineRun:
    spec: PipelineSpec
    master_seed: int
    n_docs: int
    oov_count: int
    wall_time: float
    doc_status: dict[str, str] = field(default_factory=dict)
    output_sha256: str = ""

    def manifest(self) -> dict:
        failures = {d: s for d, s in self.doc_status.items() if s != "ok"}
        return {
            "pipeline_id": self.spec.pipeline_id,
            "master_seed": self.master_seed,
            "spec": self.spec.to_dict(),
            "spec_sha256": spec_hash(self.spec),
            "n_docs": self.n_docs,
            "oov_count": self.oov_count,
            "wall_time_s": self.wall_time,
            "failed_docs": failures,
            "output_sha256": self.output_sha256,
        }


def spec_hash(spec: PipelineSpec) -> str:
    payload = json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def corpus_digest(docs: Sequence[Document]) -> str:
    """Order-independent-of-scheduling digest of the transformed corpus."""
    h = hashlib.sha256()
    for doc in docs:
        h.update(doc.doc_id.encode("utf-8"))
        h.update(b"\x00")
        for tok, prov in zip(doc.tokens, doc.provenance):
            h.update(tok.text.encode("utf-8"))
            h.update(b"\x1f")
            h.update(f"{prov[0]}:{prov[1]}".encode())
            h.update(b"\x1e")
    return h.hexdigest()


class _StageRunner:
    """Loaded, immutable stage resources shared across documents."""

    def __init__(self, spec: PipelineSpec, store: EmbeddingStore | None, docs: Sequence[Document]):
        self.spec = spec
        self.store = store
        self.rules: dict[int, list[MaskRule]] = {}
        self.annotations: dict[int, dict[str, list[PiiSpan]]] = {}
        doc_map = {d.doc_id: d for d in docs}
        for i, stage in enumerate(spec.stages):
            if isinstance(stage, MaskStage):
                if stage.rules_path:
                    self.rules[i] = load_rules(stage.rules_path)
                else:
                    spans = load_annotations(stage.annotations_path, doc_map)
                    grouped: dict[str, list[PiiSpan]] = {}
                    for s in spans:
                        grouped.setdefault(s.doc_id, []).append(s)
                    self.annotations[i] = grouped

    def run_doc(self, doc: Document, master_seed: int) -> tuple[Document, int]:
        oov = 0
        for i, stage in enumerate(self.spec.stages):
            if isinstance(stage, MaskStage):
                if i in self.rules:
                    doc, _ = rule_mask(doc, self.rules[i])
                else:
                    spans = self.annotations[i].get(doc.doc_id, [])
                    doc = apply_annotations(doc, spans, stage.threshold)
            else:
                doc, stage_oov = self._privatize_doc(doc, stage.config, master_seed)
                oov += stage_oov
        return doc, oov

    def _privatize_doc(
        self, doc: Document, config: MechanismConfig, master_seed: int
    ) -> tuple[Document, int]:
        assert self.store is not None
        rng = doc_rng(master_seed, doc.doc_id)
        positions: list[int] = []
        indices: list[int] = []
        oov = 0
        for pos, tok in enumerate(doc.tokens):
            if tok.kind is TokenKind.PLACEHOLDER and self.spec.preserve_placeholders:
                continue
            idx = self.store.index_of(tok.text)
            if idx is None:
                oov += 1
                logger.debug("OOV token %r in doc %s passes through", tok.text, doc.doc_id)
                continue
            positions.append(pos)
            indices.append(idx)
        if not positions:
            return doc, oov
        replacements = privatize_tokens(np.array(indices, dtype=np.int64), self.store, config, rng)
        new_tokens = list(doc.tokens)
        for pos, new_idx in zip(positions, replacements):
            old = new_tokens[pos]
            new_tokens[pos] = type(old)(
                text=self.store.vocab[int(new_idx)],
                char_start=old.char_start,
                char_end=old.char_end,
                kind=TokenKind.WORD,
            )
        return (
            Document(
                doc_id=doc.doc_id,
                source_text=doc.source_text,
                tokens=new_tokens,
                provenance=list(doc.provenance),
            ),
            oov,
        )


def run_pipeline(
    corpus: Sequence[Document],
    spec: PipelineSpec,
    master_seed: int,
    store: EmbeddingStore | None = None,
    jobs: int = 1,
) -> tuple[list[Document], PipelineRun]:
    """Apply the spec to every document; failures skip the document, not the run."""
    diagnostics = validate_spec(spec, store)
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        raise SpecValidationError("; ".join(d.message for d in errors))
    for d in diagnostics:
        logger.warning("%s: %s", spec.pipeline_id, d.message)

    if spec.privatize_stage() is not None:
        if store is None:
            raise StoreMissingError("spec has a privatize stage but no embedding store was provided")
        store.ensure_index()

    start = time.perf_counter()
    runner = _StageRunner(spec, store, corpus)
    status: dict[str, str] = {}
    oov_total = 0

    def work(doc: Document) -> tuple[Document, int, str]:
        try:
            out, oov = runner.run_doc(doc, master_seed)
            return out, oov, "ok"
        except TextDpError as exc:
            logger.error("doc %s failed: %s", doc.doc_id, exc)
            return doc, 0, f"error: {exc}"

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, corpus))
    else:
        results = [work(doc) for doc in corpus]

    outputs: list[Document] = []
    for doc, (out, oov, st) in zip(corpus, results):
        outputs.append(out)
        oov_total += oov
        status[doc.doc_id] = st
    if oov_total:
        logger.warning("%s: %d out-of-vocabulary tokens passed through unperturbed",
                       spec.pipeline_id, oov_total)

    run = PipelineRun(
        spec=spec,
        master_seed=master_seed,
        n_docs=len(corpus),
        oov_count=oov_total,
        wall_time=time.perf_counter() - start,
        doc_status=status,
        output_sha256=corpus_digest(outputs),
    )
    return outputs, run
