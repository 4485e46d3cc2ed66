"""Token-level differential-privacy mechanisms.

Two mechanisms operate on a vocabulary embedding store:

* metric-DP: perturb the token's embedding with a noise vector whose
  magnitude is Gamma(shape=d, scale=1/eps) and whose direction is uniform
  on the unit sphere (density proportional to exp(-eps * ||z||), the
  d-dimensional metric-DP noise), then snap to the nearest vocabulary
  token. The original token is never excluded; surviving unchanged is the
  leakage channel the evaluation measures.

* RANTEXT-style: draw an adjacency-list size k from a clamped Laplace
  around k0 with scale size_sensitivity / (rho * eps), fetch the k
  approximate nearest neighbors of the token (the token itself always
  included), and pick a replacement with the exponential mechanism at
  budget (1 - rho) * eps, utility = -distance.

All draws flow through a numpy Generator; a (seed, stream_id) pair pins
the stream, and per-document stream ids are a keyed hash of the doc id so
corpus-level parallelism stays deterministic.

Canonical draw order (batch helpers replicate it exactly):
  metric-DP, per token: standard_normal(d), then gamma(1).
  RANTEXT, per token:   laplace(1), then one uniform for the selection.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingStore, NeighborQueryResult
from .errors import (
    EmptyCandidatesError,
    InvalidConfigError,
    InvalidDimensionError,
    InvalidEpsilonError,
)

DELTA_U_PER_LIST = "per_list"
DELTA_U_GLOBAL = "global"


@dataclass
class MetricDpConfig:
    epsilon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidEpsilonError(f"epsilon must be positive and finite, got {self.epsilon}")


@dataclass
class RantextConfig:
    epsilon: float
    rho: float = 0.5
    k0: int = 50
    k_min: int = 10
    k_max: int = 200
    size_sensitivity: float = 1.0
    utility_sensitivity: float = 1.0
    delta_u_mode: str = DELTA_U_PER_LIST

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise InvalidEpsilonError(f"epsilon must be positive and finite, got {self.epsilon}")
        if not 0.0 < self.rho < 1.0:
            raise InvalidConfigError(f"rho must be in (0, 1), got {self.rho}")
        if not 1 <= self.k_min <= self.k0 <= self.k_max:
            raise InvalidConfigError(
                f"need 1 <= k_min <= k0 <= k_max, got k_min={self.k_min} k0={self.k0} k_max={self.k_max}"
            )
        if self.size_sensitivity <= 0:
            raise InvalidConfigError("size_sensitivity must be positive")
        if self.utility_sensitivity <= 0:
            raise InvalidConfigError("utility_sensitivity must be positive")
        if self.delta_u_mode not in (DELTA_U_PER_LIST, DELTA_U_GLOBAL):
            raise InvalidConfigError(f"unknown delta_u_mode {self.delta_u_mode!r}")

    def validate_against(self, store: EmbeddingStore) -> None:
        if self.k_max > len(store) - 1:
            raise InvalidConfigError(
                f"k_max={self.k_max} must be <= vocab size - 1 = {len(store) - 1}"
            )


MechanismConfig = MetricDpConfig | RantextConfig


def mechanism_name(config: MechanismConfig) -> str:
    return "metric_dp" if isinstance(config, MetricDpConfig) else "rantext"


def config_from_dict(obj: dict) -> MechanismConfig:
    """Parse the {"mechanism", "epsilon", "rantext": {...}} config shape."""
    mech = obj.get("mechanism")
    if mech == "metric_dp":
        return MetricDpConfig(epsilon=float(obj["epsilon"]))
    if mech == "rantext":
        extra = obj.get("rantext") or {}
        allowed = {"rho", "k0", "k_min", "k_max", "size_sensitivity", "utility_sensitivity", "delta_u_mode"}
        unknown = set(extra) - allowed
        if unknown:
            raise InvalidConfigError(f"unknown rantext fields: {sorted(unknown)}")
        return RantextConfig(epsilon=float(obj["epsilon"]), **extra)
    raise InvalidConfigError(f"unknown mechanism {mech!r}")


def config_to_dict(config: MechanismConfig) -> dict:
    if isinstance(config, MetricDpConfig):
        return {"mechanism": "metric_dp", "epsilon": config.epsilon}
    return {
        "mechanism": "rantext",
        "epsilon": config.epsilon,
        "rantext": {
            "rho": config.rho,
            "k0": config.k0,
            "k_min": config.k_min,
            "k_max": config.k_max,
            "size_sensitivity": config.size_sensitivity,
            "utility_sensitivity": config.utility_sensitivity,
            "delta_u_mode": config.delta_u_mode,
        },
    }


# -- seeding ----------------------------------------------------------------

@dataclass
class RngState:
    """A reproducible stream: identical (seed, stream_id) -> identical draws."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=[self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF])
        return np.random.Generator(np.random.PCG64(ss))


def doc_stream_id(master_seed: int, doc_id: str) -> int:
    """Stable 64-bit per-document stream id keyed by the master seed."""
    key = (master_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def doc_rng(master_seed: int, doc_id: str) -> np.random.Generator:
    return RngState(seed=master_seed, stream_id=doc_stream_id(master_seed, doc_id)).generator()


# -- metric-DP ---------------------------------------------------------------

def sample_metric_noise(dim: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Noise vector r*u with r ~ Gamma(dim, 1/epsilon), u uniform on the sphere.

    E[r] = dim/epsilon and Var[r] = dim/epsilon**2.
    """
    if dim < 2:
        raise InvalidDimensionError(f"dim must be >= 2, got {dim}")
    if not (math.isfinite(epsilon) and epsilon > 0):
        raise InvalidEpsilonError(f"epsilon must be positive and finite, got {epsilon}")
    direction = rng.standard_normal(dim)
    norm = np.linalg.norm(direction)
    while norm == 0.0:  # probability ~0, but keeps the unit vector well-defined
        direction = rng.standard_normal(dim)
        norm = np.linalg.norm(direction)
    magnitude = rng.gamma(shape=dim, scale=1.0 / epsilon)
    return (magnitude / norm) * direction


def metric_dp_token(
    token_index: int,
    store: EmbeddingStore,
    config: MetricDpConfig,
    rng: np.random.Generator,
    noise: np.ndarray | None = None,
) -> int:
    """Perturb one token; ``noise`` overrides the sampler for tests."""
    if noise is None:
        noise = sample_metric_noise(store.dim, config.epsilon, rng)
    query = store.embedding(token_index) + noise
    return store.exact_nearest(query).token_index


def metric_dp_tokens(
    token_indices: np.ndarray,
    store: EmbeddingStore,
    config: MetricDpConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized metric_dp_token over a token batch.

    Draws happen token by token in the canonical order, so the output is
    identical to calling metric_dp_token sequentially on the same stream;
    only the nearest-neighbor searches are batched.
    """
    idx = np.asarray(token_indices, dtype=np.int64)
    if idx.size == 0:
        return idx.copy()
    queries = store.matrix[idx].copy()
    for row in range(idx.size):
        queries[row] += sample_metric_noise(store.dim, config.epsilon, rng)
    return store.exact_nearest_batch(queries)


# -- RANTEXT -----------------------------------------------------------------

def rantext_list_size(config: RantextConfig, rng: np.random.Generator) -> int:
    """Laplace-perturbed adjacency-list size, clamped to [k_min, k_max]."""
    scale = config.size_sensitivity / (config.rho * config.epsilon)
    raw = config.k0 + rng.laplace(0.0, scale)
    return int(np.clip(round(raw), config.k_min, config.k_max))


def exponential_select(
    candidates: list[tuple[int, float]] | list[NeighborQueryResult],
    epsilon_sel: float,
    delta_u: float,
    rng: np.random.Generator,
) -> int:
    """Exponential mechanism over (token_index, distance) candidates.

    Picks candidate c with probability proportional to
    exp(epsilon_sel * u(c) / (2 * delta_u)) for utility u(c) = -distance,
    stabilized by subtracting the max logit so arbitrarily large budgets
    cannot overflow. epsilon_sel = 0 degenerates to uniform choice.
    """
    if not candidates:
        raise EmptyCandidatesError("exponential mechanism needs at least one candidate")
    if not (math.isfinite(epsilon_sel) and epsilon_sel >= 0):
        raise InvalidEpsilonError(f"selection budget must be >= 0 and finite, got {epsilon_sel}")
    if not (math.isfinite(delta_u) and delta_u > 0):
        raise InvalidConfigError(f"delta_u must be positive and finite, got {delta_u}")

    first = candidates[0]
    if isinstance(first, NeighborQueryResult):
        ids = np.array([c.token_index for c in candidates], dtype=np.int64)
        dist = np.array([c.distance for c in candidates], dtype=np.float64)
    else:
        ids = np.array([c[0] for c in candidates], dtype=np.int64)
        dist = np.array([c[1] for c in candidates], dtype=np.float64)
    if not np.isfinite(dist).all():
        raise InvalidConfigError("candidate distances must be finite")

    logits = epsilon_sel * (-dist) / (2.0 * delta_u)
    logits -= logits.max()
    weights = np.exp(logits)
    cdf = np.cumsum(weights)
    draw = rng.random() * cdf[-1]
    pick = int(np.searchsorted(cdf, draw, side="right"))
    pick = min(pick, len(candidates) - 1)
    return int(ids[pick])


def _rantext_candidates(
    token_index: int, store: EmbeddingStore, k: int
) -> list[NeighborQueryResult]:
    neighbors = store.token_neighbors(token_index, k)
    if all(c.token_index != token_index for c in neighbors):
        # The replacement pool must keep the best-utility candidate available.
        neighbors = [NeighborQueryResult(token_index, 0.0)] + neighbors
    return neighbors


def _rantext_delta_u(config: RantextConfig, candidates: list[NeighborQueryResult]) -> float:
    if config.delta_u_mode == DELTA_U_GLOBAL:
        return config.utility_sensitivity
    span = max(c.distance for c in candidates)
    return span if span > 0 else 1.0


def rantext_token(
    token_index: int,
    store: EmbeddingStore,
    config: RantextConfig,
    rng: np.random.Generator,
) -> int:
    """One RANTEXT replacement draw; the result is always inside the drawn list."""
    k = rantext_list_size(config, rng)
    candidates = _rantext_candidates(token_index, store, k)
    delta_u = _rantext_delta_u(config, candidates)
    return exponential_select(candidates, (1.0 - config.rho) * config.epsilon, delta_u, rng)


def privatize_token(
    token_index: int,
    store: EmbeddingStore,
    config: MechanismConfig,
    rng: np.random.Generator,
) -> int:
    if isinstance(config, MetricDpConfig):
        return metric_dp_token(token_index, store, config, rng)
    return rantext_token(token_index, store, config, rng)


def privatize_tokens(
    token_indices: np.ndarray,
    store: EmbeddingStore,
    config: MechanismConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch privatization with the same draw order as the per-token calls."""
    idx = np.asarray(token_indices, dtype=np.int64)
    if isinstance(config, MetricDpConfig):
        return metric_dp_tokens(idx, store, config, rng)
    out = np.empty_like(idx)
    for row in range(idx.size):
        out[row] = rantext_token(int(idx[row]), store, config, rng)
    return out
