"""Masking stages: replace PII spans with typed placeholder tokens.

Two sources of spans exist: a built-in rule masker (dictionaries and
regexes over the rendered text) and externally produced annotations with
source offsets. Both funnel into the same replacement machinery, which
swaps every token overlapped by a span for one placeholder token whose
provenance is the hull of the covered source bytes.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .categories import is_known_category, placeholder_text
from .corpus import (
    Document,
    PiiSpan,
    Token,
    TokenKind,
    filter_by_confidence,
    require_same_doc,
)
from .errors import (
    RegexCompileError,
    SpanOutOfBoundsError,
    UnknownCategoryError,
)


@dataclass
class MaskRule:
    category: str
    dictionary: frozenset[str] | None = None
    regex: re.Pattern | None = None

    def __post_init__(self) -> None:
        if not is_known_category(self.category):
            raise UnknownCategoryError(f"unknown category {self.category!r} in mask rule")
        if (self.dictionary is None) == (self.regex is None):
            raise ValueError("a mask rule needs exactly one of dictionary or regex")
        if self.dictionary is not None and any(not e for e in self.dictionary):
            raise ValueError("dictionary entries must be non-empty")


def compile_rule(obj: dict) -> MaskRule:
    category = obj.get("category", "")
    if "dictionary" in obj:
        return MaskRule(category=category, dictionary=frozenset(obj["dictionary"]))
    if "regex" in obj:
        try:
            pattern = re.compile(obj["regex"])
        except re.error as exc:
            raise RegexCompileError(f"rule for {category!r}: {exc}") from exc
        return MaskRule(category=category, regex=pattern)
    raise ValueError(f"rule for {category!r} has neither dictionary nor regex")


def load_rules(path: str | Path) -> list[MaskRule]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return [compile_rule(obj) for obj in raw]


def _find_matches(text: str, rules: Sequence[MaskRule]) -> list[tuple[int, int, int]]:
    """All candidate matches as (char_start, char_end, rule_index)."""
    found: list[tuple[int, int, int]] = []
    for ridx, rule in enumerate(rules):
        if rule.regex is not None:
            for m in rule.regex.finditer(text):
                if m.end() > m.start():
                    found.append((m.start(), m.end(), ridx))
        else:
            for entry in sorted(rule.dictionary):
                # whole-word occurrences only
                pattern = r"(?<!\w)" + re.escape(entry) + r"(?!\w)"
                for m in re.finditer(pattern, text):
                    found.append((m.start(), m.end(), ridx))
    return found


def resolve_overlaps(matches: list[tuple[int, int, int]]) -> list[tuple[int, int, int]]:
    """Greedy longest-match-wins, leftmost then rule order on ties."""
    ordered = sorted(matches, key=lambda m: (-(m[1] - m[0]), m[0], m[2]))
    accepted: list[tuple[int, int, int]] = []
    for cand in ordered:
        if all(cand[1] <= a[0] or cand[0] >= a[1] for a in accepted):
            accepted.append(cand)
    accepted.sort(key=lambda m: m[0])
    return accepted


def _replace_token_runs(
    doc: Document, replacements: Sequence[tuple[int, int, str]]
) -> Document:
    """Replace token index runs [first, last] with placeholder tokens.

    ``replacements`` are (first_token, last_token, category), already
    non-conflicting and sorted by first_token.
    """
    new_tokens: list[Token] = []
    new_prov: list[tuple[int, int]] = []
    cursor = 0
    for first, last, category in replacements:
        for i in range(cursor, first):
            new_tokens.append(doc.tokens[i])
            new_prov.append(doc.provenance[i])
        src_start = min(doc.provenance[i][0] for i in range(first, last + 1))
        src_end = max(doc.provenance[i][1] for i in range(first, last + 1))
        new_tokens.append(
            Token(
                text=placeholder_text(category),
                char_start=src_start,
                char_end=src_end,
                kind=TokenKind.PLACEHOLDER,
            )
        )
        new_prov.append((src_start, src_end))
        cursor = last + 1
    for i in range(cursor, len(doc.tokens)):
        new_tokens.append(doc.tokens[i])
        new_prov.append(doc.provenance[i])
    return Document(
        doc_id=doc.doc_id,
        source_text=doc.source_text,
        tokens=new_tokens,
        provenance=new_prov,
    )


def _runs_for_spans(
    spans_in_order: Iterable[tuple[int, int, str]],
    token_spans: Sequence[tuple[int, int]],
) -> list[tuple[int, int, str]]:
    """Map char spans to token runs; later spans lose claimed tokens."""
    claimed: set[int] = set()
    runs: list[tuple[int, int, str]] = []
    for start, end, category in spans_in_order:
        hit = [
            i
            for i, (ts, te) in enumerate(token_spans)
            if ts < end and te > start
        ]
        if not hit or any(i in claimed for i in hit):
            continue
        claimed.update(range(hit[0], hit[-1] + 1))
        runs.append((hit[0], hit[-1], category))
    runs.sort(key=lambda r: r[0])
    return runs


def rule_mask(doc: Document, rules: Sequence[MaskRule]) -> tuple[Document, list[PiiSpan]]:
    """Apply built-in rules to the rendered text; returns (masked doc, predicted spans)."""
    rendered = doc.render()
    matches = resolve_overlaps(_find_matches(rendered, rules))
    if not matches:
        return doc, []

    # Token offsets within the rendered text, in character coordinates.
    rendered_spans: list[tuple[int, int]] = []
    src = doc.source_bytes
    pos = 0
    prev_end = 0
    for tok in doc.tokens:
        pos += len(src[prev_end:tok.char_start].decode("utf-8"))
        rendered_spans.append((pos, pos + len(tok.text)))
        pos += len(tok.text)
        prev_end = tok.char_end

    # Priority = longest, leftmost (same order resolve_overlaps accepted them in).
    prioritized = sorted(matches, key=lambda m: (-(m[1] - m[0]), m[0], m[2]))
    prio_spans = [(s, e, rules[r].category) for s, e, r in prioritized]
    runs = _runs_for_spans(prio_spans, rendered_spans)
    masked = _replace_token_runs(doc, runs)

    predicted: list[PiiSpan] = []
    for tok, prov in zip(masked.tokens, masked.provenance):
        if tok.kind is TokenKind.PLACEHOLDER:
            predicted.append(
                PiiSpan(
                    doc_id=doc.doc_id,
                    char_start=prov[0],
                    char_end=prov[1],
                    category=tok.text[1:-1],
                    confidence=1.0,
                )
            )
    # Only spans created by this pass (the doc may already hold placeholders).
    before = {
        (p[0], p[1])
        for t, p in zip(doc.tokens, doc.provenance)
        if t.kind is TokenKind.PLACEHOLDER
    }
    predicted = [s for s in predicted if (s.char_start, s.char_end) not in before]
    return masked, predicted


def apply_annotations(doc: Document, spans: Iterable[PiiSpan], threshold: float = 0.0) -> Document:
    """Mask externally produced spans (source offsets) at a confidence threshold.

    Overlaps resolve by confidence, then span length, then position.
    """
    kept = []
    for span in spans:
        require_same_doc(span, doc)
        if span.char_end > len(doc.source_bytes):
            raise SpanOutOfBoundsError(
                f"span [{span.char_start}, {span.char_end}) beyond doc {doc.doc_id!r}"
            )
        kept.append(span)
    kept = filter_by_confidence(kept, threshold)
    if not kept:
        return doc
    kept.sort(key=lambda s: (-s.confidence, -(s.char_end - s.char_start), s.char_start))
    accepted: list[PiiSpan] = []
    for span in kept:
        if all(span.char_end <= a.char_start or span.char_start >= a.char_end for a in accepted):
            accepted.append(span)
    ordered = [(s.char_start, s.char_end, s.category) for s in accepted]
    runs = _runs_for_spans(ordered, list(doc.provenance))
    if not runs:
        return doc
    return _replace_token_runs(doc, runs)
