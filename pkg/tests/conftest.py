import json
from pathlib import Path

import numpy as np
import pytest

from textdp.corpus import Document
from textdp.embeddings import EmbeddingStore
from textdp.synth import SynthConfig, build_synthetic_store, corpus_vocab, generate

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def tokenizer_cases() -> list[dict]:
    with open(FIXTURES / "tokenizer_cases.json", encoding="utf-8") as fh:
        return json.load(fh)["cases"]


@pytest.fixture(scope="session")
def tiny_store_path() -> Path:
    return FIXTURES / "tiny.tdpe"


def make_random_store(n: int = 500, dim: int = 16, seed: int = 42, scale: float = 1.0) -> EmbeddingStore:
    rng = np.random.Generator(np.random.PCG64(seed))
    vocab = [f"tok{i:05d}" for i in range(n)]
    return EmbeddingStore(vocab=vocab, matrix=scale * rng.standard_normal((n, dim)))


@pytest.fixture(scope="session")
def random_store() -> EmbeddingStore:
    return make_random_store()


@pytest.fixture(scope="session")
def small_synth():
    """A ~10k-word corpus with matching clustered store; shared across tests."""
    result = generate(SynthConfig(n_docs=8, target_words=10_000, seed=11))
    store = build_synthetic_store(corpus_vocab(result.docs), seed=11)
    return result, store


def doc_from(text: str, doc_id: str = "d1") -> Document:
    return Document.from_text(doc_id, text)
