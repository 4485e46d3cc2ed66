"""Read a pretrained transformer's vocabulary + input embeddings, write TDPE.

Only the input embedding matrix is exported; the sidecar JSON records the
model id, the layer choice, and content digests so the consumer can verify
the file it loaded bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .writer import write_tdpe

INPUT_EMBEDDINGS = "input_embeddings"


class ExportError(Exception):
    pass


class ModelUnavailableError(ExportError):
    pass


class DuplicateTokenError(ExportError):
    pass


class WriteError(ExportError):
    pass


@dataclass
class ExportSpec:
    model_id: str
    out_path: str
    layer: str = INPUT_EMBEDDINGS
    drop_special: bool = False
    dedup: bool = False
    sidecar_path: str | None = None

    def __post_init__(self) -> None:
        if self.layer != INPUT_EMBEDDINGS:
            raise ExportError(f"unsupported layer {self.layer!r}; only input embeddings are exported")


def _load_model(model_id: str):
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:  # transformers raises a zoo of types here
        raise ModelUnavailableError(f"cannot load model {model_id!r}: {exc}") from exc
    return tokenizer, model


def _ordered_vocab(tokenizer, n_rows: int, drop_special: bool) -> list[tuple[str, int]]:
    """(token, row_id) pairs sorted by id, optionally without special tokens."""
    vocab = tokenizer.get_vocab()
    special_ids = set(tokenizer.all_special_ids or []) if drop_special else set()
    pairs = [
        (token, idx)
        for token, idx in vocab.items()
        if idx not in special_ids and 0 <= idx < n_rows
    ]
    pairs.sort(key=lambda p: p[1])
    return pairs


def export(spec: ExportSpec) -> dict:
    """Run the export; returns the sidecar metadata."""
    tokenizer, model = _load_model(spec.model_id)
    weights = model.get_input_embeddings().weight.detach().cpu().numpy().astype("<f4")
    pairs = _ordered_vocab(tokenizer, weights.shape[0], spec.drop_special)

    seen: dict[str, int] = {}
    kept: list[tuple[str, int]] = []
    dropped = 0
    for token, idx in pairs:
        if token in seen:
            if not spec.dedup:
                raise DuplicateTokenError(
                    f"token {token!r} appears at ids {seen[token]} and {idx}; pass --dedup to keep the first"
                )
            dropped += 1
            continue
        seen[token] = idx
        kept.append((token, idx))

    vocab = [t for t, _ in kept]
    matrix = weights[[i for _, i in kept]]
    try:
        n_bytes = write_tdpe(spec.out_path, vocab, matrix)
    except OSError as exc:
        raise WriteError(f"cannot write {spec.out_path}: {exc}") from exc

    sidecar = {
        "model_id": spec.model_id,
        "layer": spec.layer,
        "format": "TDPE",
        "version": 1,
        "dim": int(matrix.shape[1]),
        "vocab_count": len(vocab),
        "dropped_special": spec.drop_special,
        "dropped_duplicates": dropped,
        "file_bytes": n_bytes,
        "matrix_sha256": hashlib.sha256(np.ascontiguousarray(matrix, dtype="<f4").tobytes()).hexdigest(),
        "vocab_sha256": hashlib.sha256("\x00".join(vocab).encode("utf-8")).hexdigest(),
    }
    sidecar_path = Path(spec.sidecar_path or str(spec.out_path) + ".json")
    try:
        sidecar_path.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"cannot write sidecar {sidecar_path}: {exc}") from exc
    return sidecar
