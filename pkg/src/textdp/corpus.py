"""Document model, tokenization, and annotation ingestion.

Offsets throughout are byte offsets into the UTF-8 encoding of the source
text, which keeps spans unambiguous for accented Dutch text. Tokens carry
their source span; transformed documents additionally keep a per-token
provenance list mapping every output token back to the source bytes it
came from, so leakage scoring can always align output against gold spans.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .categories import CATEGORIES, is_direct, is_known_category
from .errors import (
    CrossDocSpanError,
    InvalidThresholdError,
    ParseError,
    SpanOutOfBoundsError,
    UnknownCategoryError,
)

PLACEHOLDER_RE = re.compile(r"<[A-Z_\-]+>")


class TokenKind(Enum):
    WORD = "word"
    PLACEHOLDER = "placeholder"


class Directness(Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"


@dataclass
class Token:
    text: str
    char_start: int
    char_end: int
    kind: TokenKind = TokenKind.WORD


@dataclass
class PiiSpan:
    doc_id: str
    char_start: int
    char_end: int
    category: str
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not is_known_category(self.category):
            raise UnknownCategoryError(f"unknown PII category {self.category!r}")
        if self.char_start >= self.char_end:
            raise SpanOutOfBoundsError(
                f"span [{self.char_start}, {self.char_end}) in doc {self.doc_id!r} is empty or inverted"
            )

    @property
    def directness(self) -> Directness:
        return Directness.DIRECT if is_direct(self.category) else Directness.INDIRECT


@dataclass
class Document:
    """A tokenized document, possibly transformed.

    ``provenance[i]`` is the source byte span output token ``i`` derives
    from. For a freshly tokenized document it equals the token's own span.
    """

    doc_id: str
    source_text: str
    tokens: list[Token]
    provenance: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.provenance:
            self.provenance = [(t.char_start, t.char_end) for t in self.tokens]
        if len(self.provenance) != len(self.tokens):
            raise ValueError("provenance must map every token to exactly one span")

    @classmethod
    def from_text(cls, doc_id: str, text: str) -> "Document":
        return cls(doc_id=doc_id, source_text=text, tokens=tokenize(text))

    @property
    def source_bytes(self) -> bytes:
        cached = getattr(self, "_source_bytes", None)
        if cached is None:
            cached = self.source_text.encode("utf-8")
            self._source_bytes = cached
        return cached

    def render(self) -> str:
        """Rebuild running text: token texts joined by the original inter-token gaps."""
        src = self.source_bytes
        parts: list[bytes] = []
        prev_end = 0
        for tok in self.tokens:
            parts.append(src[prev_end:tok.char_start])
            parts.append(tok.text.encode("utf-8"))
            prev_end = tok.char_end
        parts.append(src[prev_end:])
        return b"".join(parts).decode("utf-8")

    def span_text(self, start: int, end: int) -> str:
        if start < 0 or end > len(self.source_bytes) or start >= end:
            raise SpanOutOfBoundsError(
                f"span [{start}, {end}) outside doc {self.doc_id!r} of {len(self.source_bytes)} bytes"
            )
        try:
            return self.source_bytes[start:end].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpanOutOfBoundsError(
                f"span [{start}, {end}) in doc {self.doc_id!r} splits a UTF-8 sequence"
            ) from exc


def _is_breaking(ch: str) -> bool:
    # Punctuation and symbols split off at token edges; letters, digits and
    # combining marks never do.
    return unicodedata.category(ch)[0] in ("P", "S")


def _char_tokens(text: str) -> Iterator[tuple[str, int, int, TokenKind]]:
    """Yield (text, char_start, char_end, kind) in character coordinates."""
    pos = 0
    for match in PLACEHOLDER_RE.finditer(text):
        name = match.group()[1:-1]
        if name not in CATEGORIES:
            continue
        yield from _split_segment(text, pos, match.start())
        yield match.group(), match.start(), match.end(), TokenKind.PLACEHOLDER
        pos = match.end()
    yield from _split_segment(text, pos, len(text))


def _split_segment(text: str, seg_start: int, seg_end: int) -> Iterator[tuple[str, int, int, TokenKind]]:
    for chunk in re.finditer(r"\S+", text[seg_start:seg_end]):
        start = seg_start + chunk.start()
        end = seg_start + chunk.end()
        i, j = start, end
        lead: list[tuple[str, int, int, TokenKind]] = []
        while i < j and _is_breaking(text[i]):
            lead.append((text[i], i, i + 1, TokenKind.WORD))
            i += 1
        trail: list[tuple[str, int, int, TokenKind]] = []
        while j > i and _is_breaking(text[j - 1]):
            trail.append((text[j - 1], j - 1, j, TokenKind.WORD))
            j -= 1
        yield from lead
        if i < j:
            yield text[i:j], i, j, TokenKind.WORD
        yield from reversed(trail)


def tokenize(text: str) -> list[Token]:
    """Whitespace + edge-punctuation tokenizer with placeholder awareness.

    Known ``<CATEGORY>`` placeholders become single Placeholder tokens;
    anything else splits on whitespace, then sheds leading/trailing
    punctuation or symbol characters as one-character Word tokens.
    Offsets in the returned tokens are UTF-8 byte offsets.
    """
    if not text:
        return []
    # char index -> byte offset of that character's first byte
    byte_at = [0] * (len(text) + 1)
    total = 0
    for idx, ch in enumerate(text):
        byte_at[idx] = total
        total += len(ch.encode("utf-8"))
    byte_at[len(text)] = total

    return [
        Token(text=t, char_start=byte_at[s], char_end=byte_at[e], kind=kind)
        for t, s, e, kind in _char_tokens(text)
    ]


# -- JSON-Lines ingestion --------------------------------------------------

def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def load_corpus(path: str | Path) -> list[Document]:
    """Load and tokenize a raw corpus file of {"doc_id", "text"} lines."""
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            doc_id = obj["doc_id"]
            text = obj["text"]
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        if doc_id in seen:
            raise ParseError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        docs.append(Document.from_text(doc_id, text))
    return docs


def load_annotations(path: str | Path, docs: dict[str, Document] | None = None) -> list[PiiSpan]:
    """Load PII spans; spans with unknown categories or outside their document are rejected."""
    spans: list[PiiSpan] = []
    for lineno, obj in _iter_jsonl(path):
        try:
            span = PiiSpan(
                doc_id=obj["doc_id"],
                char_start=int(obj["start"]),
                char_end=int(obj["end"]),
                category=obj["category"],
                confidence=float(obj.get("confidence", 1.0)),
            )
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from exc
        except (UnknownCategoryError, SpanOutOfBoundsError) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
        if not 0.0 <= span.confidence <= 1.0:
            raise ParseError(f"{path}:{lineno}: confidence {span.confidence} outside [0, 1]")
        if docs is not None:
            doc = docs.get(span.doc_id)
            if doc is None:
                raise ParseError(f"{path}:{lineno}: unknown doc_id {span.doc_id!r}")
            if span.char_end > len(doc.source_bytes):
                raise SpanOutOfBoundsError(
                    f"{path}:{lineno}: span end {span.char_end} beyond doc {span.doc_id!r}"
                )
        spans.append(span)
    return spans


def filter_by_confidence(spans: Iterable[PiiSpan], threshold: float) -> list[PiiSpan]:
    """Keep spans with confidence >= threshold, preserving order."""
    if not 0.0 <= threshold < 1.0:
        raise InvalidThresholdError(f"threshold must be in [0, 1), got {threshold}")
    return [s for s in spans if s.confidence >= threshold]


def spans_for_doc(spans: Iterable[PiiSpan], doc: Document) -> list[PiiSpan]:
    """Select the spans belonging to ``doc``, raising on cross-document abuse."""
    out = []
    for s in spans:
        if s.doc_id == doc.doc_id:
            if s.char_end > len(doc.source_bytes):
                raise SpanOutOfBoundsError(
                    f"span [{s.char_start}, {s.char_end}) beyond doc {doc.doc_id!r}"
                )
            out.append(s)
    return out


def require_same_doc(span: PiiSpan, doc: Document) -> None:
    if span.doc_id != doc.doc_id:
        raise CrossDocSpanError(
            f"span from doc {span.doc_id!r} applied to doc {doc.doc_id!r}"
        )


# -- output corpus (transformed documents) ---------------------------------

def write_output_corpus(docs: Iterable[Document], path: str | Path) -> None:
    """Write transformed documents: rendered text plus tokens and provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            line = {
                "doc_id": doc.doc_id,
                "text": doc.render(),
                "tokens": [t.text for t in doc.tokens],
                "provenance": [list(p) for p in doc.provenance],
            }
            fh.write(json.dumps(line, ensure_ascii=False) + "\n")


def load_output_corpus(path: str | Path, sources: dict[str, Document]) -> list[Document]:
    """Rebuild transformed documents, joining source text back in by doc_id."""
    docs: list[Document] = []
    for lineno, obj in _iter_jsonl(path):
        doc_id = obj.get("doc_id")
        if doc_id not in sources:
            raise ParseError(f"{path}:{lineno}: doc_id {doc_id!r} not in the raw corpus")
        if "tokens" not in obj or "provenance" not in obj:
            raise ParseError(f"{path}:{lineno}: missing tokens/provenance fields")
        source = sources[doc_id]
        tokens = []
        provenance = []
        for text, (start, end) in zip(obj["tokens"], obj["provenance"], strict=True):
            kind = (
                TokenKind.PLACEHOLDER
                if PLACEHOLDER_RE.fullmatch(text) and text[1:-1] in CATEGORIES
                else TokenKind.WORD
            )
            tokens.append(Token(text=text, char_start=start, char_end=end, kind=kind))
            provenance.append((start, end))
        docs.append(
            Document(
                doc_id=doc_id,
                source_text=source.source_text,
                tokens=tokens,
                provenance=provenance,
            )
        )
    return docs


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    """Write raw corpus lines ({"doc_id", "text"})."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.source_text}, ensure_ascii=False) + "\n")
