"""Leakage scoring, annotation survival, and the epsilon-sweep harness.

Leakage is the strict surface rule: a gold-PII unit counts as leaked when
its text still appears (case-insensitively) in any output token whose
provenance overlaps the gold span. Units are whole source tokens or,
under the subword granularity, character 4-grams of those tokens.
Placeholder output tokens never match: they are redactions, and their
names are themselves Dutch words that would otherwise collide with the
PII they replaced.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from .categories import CATEGORIES, is_direct
from .corpus import Document, PiiSpan, Token, TokenKind, tokenize
from .embeddings import EmbeddingStore
from .errors import MissingProvenanceError, ParseError, SpanOutOfBoundsError, TextDpError
from .pipeline import PipelineSpec, run_pipeline

WHOLE_TOKEN = "whole_token"
SUBWORD = "subword"
SUBWORD_NGRAM = 4

DEFAULT_EPSILON_GRID = (8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0)

TRAINABLE_CUTOFF = 10

CSV_COLUMNS = [
    "pipeline_id",
    "mechanism",
    "epsilon",
    "seed",
    "pct_total",
    "pct_direct",
    "pct_indirect",
    "entity_survival",
    "relation_survival",
    "trainable",
    "wall_time_s",
    "oov_count",
    "status",
]


# -- leakage -----------------------------------------------------------------

@dataclass
class CategoryLeak:
    total: int = 0
    leaked: int = 0


@dataclass
class LeakageReport:
    granularity: str
    per_category: dict[str, CategoryLeak] = field(
        default_factory=lambda: {c: CategoryLeak() for c in CATEGORIES}
    )

    def add(self, category: str, total: int, leaked: int) -> None:
        cell = self.per_category[category]
        cell.total += total
        cell.leaked += leaked

    def merge(self, other: "LeakageReport") -> "LeakageReport":
        if other.granularity != self.granularity:
            raise ValueError("cannot merge reports of different granularities")
        out = LeakageReport(granularity=self.granularity)
        for cat in CATEGORIES:
            out.per_category[cat].total = self.per_category[cat].total + other.per_category[cat].total
            out.per_category[cat].leaked = self.per_category[cat].leaked + other.per_category[cat].leaked
        return out

    def _bucket(self, direct: bool) -> tuple[int, int]:
        total = leaked = 0
        for cat, cell in self.per_category.items():
            if is_direct(cat) == direct:
                total += cell.total
                leaked += cell.leaked
        return total, leaked

    @property
    def direct_total(self) -> int:
        return self._bucket(True)[0]

    @property
    def direct_leaked(self) -> int:
        return self._bucket(True)[1]

    @property
    def indirect_total(self) -> int:
        return self._bucket(False)[0]

    @property
    def indirect_leaked(self) -> int:
        return self._bucket(False)[1]

    @property
    def total_units(self) -> int:
        return self.direct_total + self.indirect_total

    @property
    def leaked_units(self) -> int:
        return self.direct_leaked + self.indirect_leaked

    @staticmethod
    def _pct(leaked: int, total: int) -> float:
        return 100.0 * leaked / total if total else 0.0

    @property
    def pct_total(self) -> float:
        return self._pct(self.leaked_units, self.total_units)

    @property
    def pct_direct(self) -> float:
        return self._pct(self.direct_leaked, self.direct_total)

    @property
    def pct_indirect(self) -> float:
        return self._pct(self.indirect_leaked, self.indirect_total)

    @property
    def no_support(self) -> dict[str, bool]:
        """Flags for buckets whose denominator is zero (pct reported as 0)."""
        return {
            "total": self.total_units == 0,
            "direct": self.direct_total == 0,
            "indirect": self.indirect_total == 0,
            **{f"category:{c}": cell.total == 0 for c, cell in self.per_category.items()},
        }

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "pct_total": self.pct_total,
            "pct_direct": self.pct_direct,
            "pct_indirect": self.pct_indirect,
            "direct": {"total": self.direct_total, "leaked": self.direct_leaked},
            "indirect": {"total": self.indirect_total, "leaked": self.indirect_leaked},
            "per_category": {
                c: {"total": cell.total, "leaked": cell.leaked, "pct": self._pct(cell.leaked, cell.total)}
                for c, cell in self.per_category.items()
            },
            "no_support": {k: v for k, v in self.no_support.items() if v},
        }


def _source_tokens(doc: Document) -> list[Token]:
    cached = getattr(doc, "_eval_source_tokens", None)
    if cached is None:
        cached = tokenize(doc.source_text)
        doc._eval_source_tokens = cached
    return cached


def _units_for_token(text: str, granularity: str) -> list[str]:
    if granularity == WHOLE_TOKEN:
        return [text]
    if len(text) <= SUBWORD_NGRAM:
        return [text]
    return [text[i:i + SUBWORD_NGRAM] for i in range(len(text) - SUBWORD_NGRAM + 1)]


def score_leakage(
    output_doc: Document,
    gold_spans: Iterable[PiiSpan],
    granularity: str = WHOLE_TOKEN,
) -> LeakageReport:
    """Strict residual-PII scoring of one document against its gold spans."""
    if granularity not in (WHOLE_TOKEN, SUBWORD):
        raise ValueError(f"unknown granularity {granularity!r}")
    if len(output_doc.provenance) != len(output_doc.tokens):
        raise MissingProvenanceError(f"doc {output_doc.doc_id!r} lacks total provenance")

    report = LeakageReport(granularity=granularity)
    src_tokens = _source_tokens(output_doc)
    doc_len = len(output_doc.source_bytes)

    for span in gold_spans:
        if span.doc_id != output_doc.doc_id:
            continue
        if span.char_end > doc_len:
            raise SpanOutOfBoundsError(
                f"gold span [{span.char_start}, {span.char_end}) outside doc {output_doc.doc_id!r}"
            )
        covered = [
            t for t in src_tokens
            if t.char_start < span.char_end and t.char_end > span.char_start
        ]
        overlapping_out = [
            tok.text.lower()
            for tok, (ps, pe) in zip(output_doc.tokens, output_doc.provenance)
            if ps < span.char_end and pe > span.char_start and tok.kind is not TokenKind.PLACEHOLDER
        ]
        for src_tok in covered:
            for unit in _units_for_token(src_tok.text, granularity):
                needle = unit.lower()
                leaked = any(needle in hay for hay in overlapping_out)
                report.add(span.category, total=1, leaked=1 if leaked else 0)
    return report


def score_leakage_corpus(
    output_docs: Sequence[Document],
    gold_spans: Iterable[PiiSpan],
    granularity: str = WHOLE_TOKEN,
) -> LeakageReport:
    by_doc: dict[str, list[PiiSpan]] = {}
    for s in gold_spans:
        by_doc.setdefault(s.doc_id, []).append(s)
    total = LeakageReport(granularity=granularity)
    for doc in output_docs:
        total = total.merge(score_leakage(doc, by_doc.get(doc.doc_id, []), granularity))
    return total


# -- survival ------------------------------------------------------------------

@dataclass
class EntityAnnotation:
    doc_id: str
    entity_id: str
    char_start: int
    char_end: int
    label: str


@dataclass
class RelationAnnotation:
    doc_id: str
    relation_id: str
    head_id: str
    tail_id: str
    label: str


@dataclass
class SurvivalReport:
    entity_total: int = 0
    entity_surviving: int = 0
    relation_total: int = 0
    relation_surviving: int = 0

    @property
    def trainable(self) -> bool:
        return self.relation_surviving >= TRAINABLE_CUTOFF

    def merge(self, other: "SurvivalReport") -> "SurvivalReport":
        return SurvivalReport(
            entity_total=self.entity_total + other.entity_total,
            entity_surviving=self.entity_surviving + other.entity_surviving,
            relation_total=self.relation_total + other.relation_total,
            relation_surviving=self.relation_surviving + other.relation_surviving,
        )

    def to_dict(self) -> dict:
        return {
            "entity_total": self.entity_total,
            "entity_surviving": self.entity_surviving,
            "relation_total": self.relation_total,
            "relation_surviving": self.relation_surviving,
            "trainable": self.trainable,
        }


def load_entity_relations(path: str | Path) -> tuple[list[EntityAnnotation], list[RelationAnnotation]]:
    """Load the mixed entity/relation JSONL ({"kind": "entity"|"relation", ...})."""
    entities: list[EntityAnnotation] = []
    relations: list[RelationAnnotation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            kind = obj.get("kind")
            try:
                if kind == "entity":
                    entities.append(
                        EntityAnnotation(
                            doc_id=obj["doc_id"],
                            entity_id=obj["entity_id"],
                            char_start=int(obj["start"]),
                            char_end=int(obj["end"]),
                            label=obj["label"],
                        )
                    )
                elif kind == "relation":
                    relations.append(
                        RelationAnnotation(
                            doc_id=obj["doc_id"],
                            relation_id=obj["relation_id"],
                            head_id=obj["head"],
                            tail_id=obj["tail"],
                            label=obj["label"],
                        )
                    )
                else:
                    raise ParseError(f"{path}:{lineno}: unknown kind {kind!r}")
            except KeyError as exc:
                raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
    return entities, relations


def _entity_survives(doc: Document, ent: EntityAnnotation) -> bool:
    """True when every source token of the entity is verbatim in the output."""
    src_tokens = [
        t for t in _source_tokens(doc)
        if t.char_start < ent.char_end and t.char_end > ent.char_start
    ]
    if not src_tokens:
        return False
    for src_tok in src_tokens:
        hit = False
        for tok, (ps, pe) in zip(doc.tokens, doc.provenance):
            if ps < src_tok.char_end and pe > src_tok.char_start and tok.text == src_tok.text:
                hit = True
                break
        if not hit:
            return False
    return True


def score_survival(
    output_doc: Document,
    entities: Iterable[EntityAnnotation],
    relations: Iterable[RelationAnnotation],
) -> SurvivalReport:
    if len(output_doc.provenance) != len(output_doc.tokens):
        raise MissingProvenanceError(f"doc {output_doc.doc_id!r} lacks total provenance")
    report = SurvivalReport()
    alive: dict[str, bool] = {}
    for ent in entities:
        if ent.doc_id != output_doc.doc_id:
            continue
        if ent.char_end > len(output_doc.source_bytes):
            raise SpanOutOfBoundsError(
                f"entity span [{ent.char_start}, {ent.char_end}) outside doc {output_doc.doc_id!r}"
            )
        ok = _entity_survives(output_doc, ent)
        alive[ent.entity_id] = ok
        report.entity_total += 1
        report.entity_surviving += int(ok)
    for rel in relations:
        if rel.doc_id != output_doc.doc_id:
            continue
        report.relation_total += 1
        if alive.get(rel.head_id) and alive.get(rel.tail_id):
            report.relation_surviving += 1
    return report


def score_survival_corpus(
    output_docs: Sequence[Document],
    entities: Sequence[EntityAnnotation],
    relations: Sequence[RelationAnnotation],
) -> SurvivalReport:
    ents_by_doc: dict[str, list[EntityAnnotation]] = {}
    for e in entities:
        ents_by_doc.setdefault(e.doc_id, []).append(e)
    rels_by_doc: dict[str, list[RelationAnnotation]] = {}
    for r in relations:
        rels_by_doc.setdefault(r.doc_id, []).append(r)
    total = SurvivalReport()
    for doc in output_docs:
        total = total.merge(
            score_survival(doc, ents_by_doc.get(doc.doc_id, []), rels_by_doc.get(doc.doc_id, []))
        )
    return total


# -- sweep ---------------------------------------------------------------------

@dataclass
class SweepRow:
    pipeline_id: str
    mechanism: str
    epsilon: float
    seed: int
    pct_total: float | None = None
    pct_direct: float | None = None
    pct_indirect: float | None = None
    entity_survival: int | None = None
    relation_survival: int | None = None
    trainable: bool | None = None
    wall_time_s: float = 0.0
    oov_count: int = 0
    status: str = "ok"


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILON_GRID
    output_digests: dict[str, str] = field(default_factory=dict)

    def sorted_rows(self) -> list[SweepRow]:
        return sorted(self.rows, key=lambda r: (r.pipeline_id, r.mechanism, r.epsilon, r.seed))

    def determinism_payload(self) -> dict:
        """Everything a re-run must reproduce; wall times excluded."""
        rows = []
        for r in self.sorted_rows():
            obj = {f.name: getattr(r, f.name) for f in fields(SweepRow)}
            obj.pop("wall_time_s")
            rows.append(obj)
        return {"rows": rows, "output_digests": dict(sorted(self.output_digests.items()))}

    def determinism_hash(self) -> str:
        import hashlib

        payload = json.dumps(self.determinism_payload(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def run_sweep(
    corpus: Sequence[Document],
    gold: Sequence[PiiSpan],
    pipelines: Sequence[PipelineSpec],
    eps_grid: Sequence[float] = DEFAULT_EPSILON_GRID,
    seeds: Sequence[int] = (1,),
    store: EmbeddingStore | None = None,
    entities: Sequence[EntityAnnotation] = (),
    relations: Sequence[RelationAnnotation] = (),
    granularity: str = WHOLE_TOKEN,
    jobs: int = 1,
) -> SweepResult:
    """Cross-product of (pipeline, epsilon, seed); cell failures stay in their row."""
    if not eps_grid:
        raise ValueError("epsilon grid must be non-empty")
    if store is not None:
        store.ensure_index()

    cells = [
        (spec, float(eps), int(seed))
        for spec in pipelines
        for eps in eps_grid
        for seed in seeds
    ]

    def run_cell(cell: tuple[PipelineSpec, float, int]) -> tuple[SweepRow, str | None]:
        spec, eps, seed = cell
        concrete = spec.with_epsilon(eps) if spec.privatize_stage() else spec
        row = SweepRow(
            pipeline_id=spec.pipeline_id,
            mechanism=spec.mechanism(),
            epsilon=eps,
            seed=seed,
        )
        started = time.perf_counter()
        try:
            outputs, run = run_pipeline(corpus, concrete, master_seed=seed, store=store)
            leak = score_leakage_corpus(outputs, gold, granularity)
            row.pct_total = leak.pct_total
            row.pct_direct = leak.pct_direct
            row.pct_indirect = leak.pct_indirect
            if entities or relations:
                surv = score_survival_corpus(outputs, entities, relations)
                row.entity_survival = surv.entity_surviving
                row.relation_survival = surv.relation_surviving
                row.trainable = surv.trainable
            row.oov_count = run.oov_count
            row.wall_time_s = time.perf_counter() - started
            return row, run.output_sha256
        except TextDpError as exc:
            row.status = f"error: {exc}"
            row.wall_time_s = time.perf_counter() - started
            return row, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]

    result = SweepResult(epsilon_grid=tuple(float(e) for e in eps_grid))
    for (spec, eps, seed), (row, digest) in zip(cells, outcomes):
        result.rows.append(row)
        if digest is not None:
            result.output_digests[f"{spec.pipeline_id}|{spec.mechanism()}|{eps:g}|{seed}"] = digest
    result.rows = result.sorted_rows()
    return result


# -- report emission -------------------------------------------------------------

def _cell_str(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def sweep_to_csv(sweep: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in sweep.sorted_rows():
        writer.writerow([_cell_str(getattr(row, col)) for col in CSV_COLUMNS])
    return buf.getvalue()


def sweep_from_csv(text: str) -> SweepResult:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ParseError(f"unexpected CSV header: {header}")
    result = SweepResult()
    rows: list[SweepRow] = []
    for raw in reader:
        if not raw:
            continue
        rec = dict(zip(CSV_COLUMNS, raw))

        def opt_float(key: str) -> float | None:
            return float(rec[key]) if rec[key] != "" else None

        def opt_int(key: str) -> int | None:
            return int(rec[key]) if rec[key] != "" else None

        rows.append(
            SweepRow(
                pipeline_id=rec["pipeline_id"],
                mechanism=rec["mechanism"],
                epsilon=float(rec["epsilon"]),
                seed=int(rec["seed"]),
                pct_total=opt_float("pct_total"),
                pct_direct=opt_float("pct_direct"),
                pct_indirect=opt_float("pct_indirect"),
                entity_survival=opt_int("entity_survival"),
                relation_survival=opt_int("relation_survival"),
                trainable=None if rec["trainable"] == "" else rec["trainable"] == "true",
                wall_time_s=float(rec["wall_time_s"]),
                oov_count=int(rec["oov_count"]),
                status=rec["status"],
            )
        )
    result.rows = rows
    eps = sorted({r.epsilon for r in rows})
    result.epsilon_grid = tuple(eps) if eps else DEFAULT_EPSILON_GRID
    return result


def sweep_to_plotdata(sweep: SweepResult) -> dict:
    """Series grouped by (pipeline, mechanism, metric), points sorted by epsilon."""
    series: list[dict] = []
    groups: dict[tuple[str, str], list[SweepRow]] = {}
    for row in sweep.sorted_rows():
        groups.setdefault((row.pipeline_id, row.mechanism), []).append(row)
    metrics = ["pct_total", "pct_direct", "pct_indirect", "entity_survival", "relation_survival"]
    for (pid, mech), rows in sorted(groups.items()):
        for metric in metrics:
            points = []
            for eps in sorted({r.epsilon for r in rows}):
                values = [
                    getattr(r, metric)
                    for r in rows
                    if r.epsilon == eps and getattr(r, metric) is not None and r.status == "ok"
                ]
                if not values:
                    continue
                points.append(
                    {
                        "epsilon": eps,
                        "mean": sum(values) / len(values),
                        "min": min(values),
                        "max": max(values),
                        "values": values,
                    }
                )
            if points:
                series.append(
                    {"pipeline_id": pid, "mechanism": mech, "metric": metric, "points": points}
                )
    return {"series": series, "epsilon_grid": list(sweep.epsilon_grid)}


def emit_report(sweep: SweepResult, fmt: str, path: str | Path) -> Path:
    """Write the sweep as csv / json / plotdata; empty sweeps are an error."""
    if not sweep.rows:
        raise ValueError("cannot emit a report for an empty sweep")
    path = Path(path)
    if fmt == "csv":
        path.write_text(sweep_to_csv(sweep), encoding="utf-8")
    elif fmt == "json":
        payload = {
            "epsilon_grid": list(sweep.epsilon_grid),
            "rows": [
                {f.name: getattr(r, f.name) for f in fields(SweepRow)}
                for r in sweep.sorted_rows()
            ],
        }
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    elif fmt == "plotdata":
        path.write_text(json.dumps(sweep_to_plotdata(sweep), indent=2), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path
