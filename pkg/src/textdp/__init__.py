"""textdp: token-level differential privacy for clinical text de-identification."""

__version__ = "0.1.0"

from .categories import CATEGORIES, DIRECT_CATEGORIES
from .corpus import Document, PiiSpan, Token, TokenKind, tokenize
from .embeddings import EmbeddingStore, load_store, write_store
from .mechanisms import (
    MetricDpConfig,
    RantextConfig,
    RngState,
    exponential_select,
    metric_dp_token,
    rantext_list_size,
    rantext_token,
    sample_metric_noise,
)
from .pipeline import PipelineSpec, run_pipeline, validate_spec
from .evaluation import (
    LeakageReport,
    SurvivalReport,
    SweepResult,
    emit_report,
    run_sweep,
    score_leakage,
    score_survival,
)
from .synth import SynthConfig, generate

__all__ = [
    "CATEGORIES",
    "DIRECT_CATEGORIES",
    "Document",
    "EmbeddingStore",
    "LeakageReport",
    "MetricDpConfig",
    "PiiSpan",
    "PipelineSpec",
    "RantextConfig",
    "RngState",
    "SurvivalReport",
    "SweepResult",
    "SynthConfig",
    "Token",
    "TokenKind",
    "emit_report",
    "exponential_select",
    "generate",
    "load_store",
    "metric_dp_token",
    "rantext_list_size",
    "rantext_token",
    "run_pipeline",
    "run_sweep",
    "sample_metric_noise",
    "score_leakage",
    "score_survival",
    "tokenize",
    "validate_spec",
    "write_store",
]
