"""Synthetic clinical-note corpus with planted PII and entity/relation labels.

Notes are template-filled Dutch-flavored sentences. A greedy controller
keeps the realized PII token rate on target, category quotas follow the
configured mix, and drug/disorder mentions plus drug-disorder relation
pairs are planted and recorded for survival scoring. Everything is
deterministic under the configured seed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .categories import CATEGORIES
from .corpus import Document, PiiSpan
from .embeddings import EmbeddingStore
from .errors import InfeasibleConfigError, LexiconMissingError
from .evaluation import EntityAnnotation, RelationAnnotation

_SLOT_RE = re.compile(r"\{([A-Z_\-]+)\}")

# One lexicon file per category, plus entity lexicons and templates.
_LEXICON_FILES = {cat: cat.lower() + ".txt" for cat in CATEGORIES}
_ENTITY_FILES = {"DRUG": "drugs.txt", "DISORDER": "disorders.txt"}
_TEMPLATE_FILE = "templates.txt"

# Feasibility cap: even all-PII sentences sustain only ~0.2 PII tokens/word.
_MAX_PII_RATE = 0.12


@dataclass
class SynthConfig:
    n_docs: int = 102
    target_words: int = 107_110
    pii_rate: float = 0.0083
    category_mix: dict[str, float] | None = None  # None = uniform over the 17
    entity_rate: float = 0.010
    relation_rate: float = 0.003
    seed: int = 0
    lexicon_dir: str | None = None  # None = packaged lexicons

    def __post_init__(self) -> None:
        if self.n_docs < 1 or self.target_words < 1:
            raise InfeasibleConfigError("n_docs and target_words must be positive")
        if not 0.0 < self.pii_rate <= _MAX_PII_RATE:
            raise InfeasibleConfigError(
                f"pii_rate must be in (0, {_MAX_PII_RATE}]; templates cannot sustain {self.pii_rate}"
            )
        for name in ("entity_rate", "relation_rate"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InfeasibleConfigError(f"{name} must be in (0, 1), got {value}")
        if self.category_mix is not None:
            unknown = set(self.category_mix) - set(CATEGORIES)
            if unknown:
                raise InfeasibleConfigError(f"unknown categories in mix: {sorted(unknown)}")
            weights = [self.category_mix.get(c, 0.0) for c in CATEGORIES]
            if any(w < 0 for w in weights) or sum(weights) <= 0:
                raise InfeasibleConfigError("category_mix weights must be non-negative and sum > 0")


CLINICAL_MIX: dict[str, float] = {
    **{c: 1.0 for c in CATEGORIES},
    "NAAM": 4.0,
    "ARTS": 4.0,
    "AFDELING": 3.0,
}


@dataclass
class _Templates:
    fillers: list[str]
    pii: dict[str, list[str]]
    entity: list[str]
    relation: dict[str, list[str]]


@dataclass
class Lexicons:
    surfaces: dict[str, list[str]]  # per category + DRUG/DISORDER
    templates: _Templates


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise LexiconMissingError(f"lexicon file missing: {path}")
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    return [ln for ln in lines if ln and not ln.startswith("#")]


def load_lexicons(lexicon_dir: str | None = None) -> Lexicons:
    if lexicon_dir is None:
        base = Path(str(resources.files("textdp").joinpath("data")))
    else:
        base = Path(lexicon_dir)
    surfaces: dict[str, list[str]] = {}
    for cat, fname in {**_LEXICON_FILES, **_ENTITY_FILES}.items():
        surfaces[cat] = _read_lines(base / fname)
        if not surfaces[cat]:
            raise LexiconMissingError(f"lexicon {fname} is empty")

    fillers: list[str] = []
    pii: dict[str, list[str]] = {c: [] for c in CATEGORIES}
    entity: list[str] = []
    relation: dict[str, list[str]] = {"ADE": [], "INDICATION": []}
    for line in _read_lines(base / _TEMPLATE_FILE):
        kind, _, text = line.partition("|")
        if not text:
            raise LexiconMissingError(f"malformed template line: {line!r}")
        if kind == "FILLER":
            fillers.append(text)
        elif kind == "ENTITY":
            entity.append(text)
        elif kind.startswith("RELATION:"):
            relation[kind.split(":", 1)[1]].append(text)
        elif kind.startswith("PII:"):
            cat = kind.split(":", 1)[1]
            if cat not in CATEGORIES:
                raise LexiconMissingError(f"template for unknown category {cat!r}")
            pii[cat].append(text)
        else:
            raise LexiconMissingError(f"unknown template kind {kind!r}")
    missing = [c for c, ts in pii.items() if not ts]
    if missing or not fillers or not entity or not all(relation.values()):
        raise LexiconMissingError(f"templates incomplete; missing PII templates for {missing}")
    return Lexicons(surfaces=surfaces, templates=_Templates(fillers, pii, entity, relation))


@dataclass
class SynthResult:
    docs: list[Document]
    pii_spans: list[PiiSpan]
    entities: list[EntityAnnotation]
    relations: list[RelationAnnotation]
    total_words: int = 0
    pii_tokens: int = 0

    @property
    def realized_pii_rate(self) -> float:
        return self.pii_tokens / self.total_words if self.total_words else 0.0


def _blen(s: str) -> int:
    return len(s.encode("utf-8"))


def _fill(template: str, choose: "callable") -> tuple[str, list[tuple[int, int, str, str]]]:
    """Fill {SLOT}s; returns (text, [(byte_start, byte_end, slot, surface)])."""
    parts: list[str] = []
    spans: list[tuple[int, int, str, str]] = []
    pos = 0
    last = 0
    for m in _SLOT_RE.finditer(template):
        pre = template[last:m.start()]
        parts.append(pre)
        pos += _blen(pre)
        surface = choose(m.group(1))
        spans.append((pos, pos + _blen(surface), m.group(1), surface))
        parts.append(surface)
        pos += _blen(surface)
        last = m.end()
    parts.append(template[last:])
    return "".join(parts), spans


class _QuotaPicker:
    """Deterministic apportionment: next category = largest quota deficit."""

    def __init__(self, mix: dict[str, float]):
        total = sum(mix.values())
        self.weights = {c: w / total for c, w in mix.items() if w > 0}
        self.used = {c: 0 for c in self.weights}
        self.planted = 0

    def next(self) -> str:
        self.planted += 1
        best = max(
            self.weights,
            key=lambda c: (self.weights[c] * self.planted - self.used[c], c),
        )
        self.used[best] += 1
        return best


def generate(config: SynthConfig) -> SynthResult:
    """Generate the corpus; deterministic under (config, seed)."""
    lex = load_lexicons(config.lexicon_dir)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed])))
    mix = config.category_mix or {c: 1.0 for c in CATEGORIES}
    picker = _QuotaPicker(mix)

    result = SynthResult(docs=[], pii_spans=[], entities=[], relations=[])
    total_words = 0
    pii_tokens = 0
    entity_count = 0
    relation_count = 0

    def pick(items: list[str]) -> str:
        return items[int(rng.integers(len(items)))]

    base_budget = config.target_words // config.n_docs
    remainder = config.target_words % config.n_docs

    for doc_no in range(config.n_docs):
        doc_id = f"synth-{doc_no:04d}"
        budget = base_budget + (1 if doc_no < remainder else 0)
        sentences: list[str] = []
        doc_bytes = 0
        doc_words = 0
        ent_counter = 0
        rel_counter = 0

        while doc_words < budget:
            # priority: PII deficit, then relations, then entities, then filler
            horizon = total_words + doc_words + 7
            if pii_tokens < config.pii_rate * horizon:
                category = picker.next()
                template = pick(lex.templates.pii[category])
                surface_for = {category: pick(lex.surfaces[category])}
                text, spans = _fill(template, lambda slot: surface_for[slot])
                kinds = [("pii", category)]
            elif relation_count < config.relation_rate * horizon:
                label = "ADE" if rng.random() < 0.5 else "INDICATION"
                template = pick(lex.templates.relation[label])
                text, spans = _fill(template, lambda slot: pick(lex.surfaces[slot]))
                kinds = [("relation", label)]
            elif entity_count < config.entity_rate * horizon:
                template = pick(lex.templates.entity)
                text, spans = _fill(template, lambda slot: pick(lex.surfaces[slot]))
                kinds = [("entity", "")]
            else:
                text, spans = pick(lex.templates.fillers), []
                kinds = []

            offset = doc_bytes + (1 if sentences else 0)
            rel_entity_ids: list[str] = []
            for s, e, slot, surface in spans:
                if kinds and kinds[0][0] == "pii":
                    result.pii_spans.append(
                        PiiSpan(
                            doc_id=doc_id,
                            char_start=offset + s,
                            char_end=offset + e,
                            category=slot,
                            confidence=1.0,
                        )
                    )
                    pii_tokens += len(surface.split())
                else:
                    ent_counter += 1
                    eid = f"e-{doc_no:04d}-{ent_counter:04d}"
                    result.entities.append(
                        EntityAnnotation(
                            doc_id=doc_id,
                            entity_id=eid,
                            char_start=offset + s,
                            char_end=offset + e,
                            label="drug" if slot == "DRUG" else "disorder",
                        )
                    )
                    entity_count += 1
                    rel_entity_ids.append(eid)
            if kinds and kinds[0][0] == "relation" and len(rel_entity_ids) == 2:
                rel_counter += 1
                relation_count += 1
                result.relations.append(
                    RelationAnnotation(
                        doc_id=doc_id,
                        relation_id=f"r-{doc_no:04d}-{rel_counter:04d}",
                        head_id=rel_entity_ids[0],
                        tail_id=rel_entity_ids[1],
                        label=kinds[0][1],
                    )
                )

            sentences.append(text)
            doc_bytes += _blen(text) + (1 if len(sentences) > 1 else 0)
            doc_words += len(text.split())

        total_words += doc_words
        result.docs.append(Document.from_text(doc_id, " ".join(sentences)))

    result.total_words = total_words
    result.pii_tokens = pii_tokens
    realized = result.realized_pii_rate
    if not 0.8 * config.pii_rate <= realized <= 1.2 * config.pii_rate:
        raise InfeasibleConfigError(
            f"realized PII rate {realized:.5f} outside the ±20% band of {config.pii_rate}"
        )
    return result


# -- synthetic embedding store -------------------------------------------------

# Cluster geometry tuned so the self-map rate of both mechanisms transitions
# smoothly across the epsilon grid {8..1024} (see the calibration test).
STORE_DIM = 32
_CLUSTER_SIZE = 20
_CENTER_SCALE = 1.25
_RADIUS_RANGE = (0.05, 2.0)


def corpus_vocab(docs: list[Document]) -> list[str]:
    vocab = sorted({tok.text for doc in docs for tok in doc.tokens})
    return vocab


def build_synthetic_store(vocab: list[str], dim: int = STORE_DIM, seed: int = 0) -> EmbeddingStore:
    """Random clustered embeddings over a vocabulary.

    Tokens are shuffled into clusters of ~20 members; each cluster draws a
    radius log-uniformly from [0.05, 2.0] so nearest-neighbor scales span
    the useful noise range of the epsilon grid.
    """
    n = len(vocab)
    if n < 2:
        raise InfeasibleConfigError("store needs at least 2 vocabulary tokens")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, n, dim])))
    order = rng.permutation(n)
    matrix = np.zeros((n, dim), dtype=np.float64)
    lo, hi = _RADIUS_RANGE
    for start in range(0, n, _CLUSTER_SIZE):
        members = order[start:start + _CLUSTER_SIZE]
        center = rng.normal(0.0, _CENTER_SCALE, size=dim)
        radius = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        offsets = rng.normal(0.0, radius / np.sqrt(dim), size=(members.size, dim))
        matrix[members] = center + offsets
    return EmbeddingStore(vocab=list(vocab), matrix=matrix)


# -- file emission ---------------------------------------------------------------

def write_synth(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    """Write corpus.jsonl, pii_gold.jsonl and annotations.jsonl."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.jsonl",
        "pii": out / "pii_gold.jsonl",
        "annotations": out / "annotations.jsonl",
    }
    with open(paths["corpus"], "w", encoding="utf-8") as fh:
        for doc in result.docs:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.source_text}, ensure_ascii=False) + "\n")
    with open(paths["pii"], "w", encoding="utf-8") as fh:
        for span in result.pii_spans:
            fh.write(
                json.dumps(
                    {
                        "doc_id": span.doc_id,
                        "start": span.char_start,
                        "end": span.char_end,
                        "category": span.category,
                        "confidence": span.confidence,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    with open(paths["annotations"], "w", encoding="utf-8") as fh:
        for ent in result.entities:
            fh.write(
                json.dumps(
                    {
                        "kind": "entity",
                        "doc_id": ent.doc_id,
                        "entity_id": ent.entity_id,
                        "start": ent.char_start,
                        "end": ent.char_end,
                        "label": ent.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
        for rel in result.relations:
            fh.write(
                json.dumps(
                    {
                        "kind": "relation",
                        "doc_id": rel.doc_id,
                        "relation_id": rel.relation_id,
                        "head": rel.head_id,
                        "tail": rel.tail_id,
                        "label": rel.label,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return paths
