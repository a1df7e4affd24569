"""Text view: pluggable subject-text embedding providers + cosine similarity.

The deterministic stub hashes whitespace tokens into `dim` buckets with
sha256 (pure integer arithmetic, platform-stable) and L2-normalizes the bag
counts. Precomputed vectors pass through unchanged; the external kind POSTs
``{"text": ...}`` and expects ``{"vector": [...]}`` back.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import requests

from .cohort import Cohort, Subject
from .errors import ConfigError, DataError, ProviderError
from .views import ViewSimilarity, cosine_similarity_matrix

PROVIDER_KINDS = ("precomputed", "deterministic_stub", "external")


@dataclass(frozen=True)
class TextEmbeddingProvider:
    name: str
    dim: int
    kind: str
    seed: int = 0
    endpoint: str | None = None
    timeout: float = 10.0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("provider dim must be >= 1")
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"unknown provider kind '{self.kind}'")
        if self.kind == "external" and not self.endpoint:
            raise ConfigError("external provider requires an endpoint")


def _stub_vector(text: str, dim: int, seed: int) -> np.ndarray:
    tokens = text.split()
    if not tokens:
        raise DataError("cannot embed empty text")
    counts = np.zeros(dim, dtype=np.int64)
    for tok in tokens:
        digest = hashlib.sha256(f"{seed}:{tok}".encode("utf-8")).digest()
        counts[int.from_bytes(digest[:8], "big") % dim] += 1
    vec = counts.astype(float)
    return vec / np.linalg.norm(vec)


def embed_text(subject: Subject, provider: TextEmbeddingProvider) -> np.ndarray:
    if provider.kind == "precomputed":
        if subject.text_embedding is None:
            raise DataError(f"subject '{subject.id}' has no precomputed text embedding")
        vec = np.asarray(subject.text_embedding, dtype=float).ravel()
        if vec.size != provider.dim:
            raise DataError(
                f"subject '{subject.id}': stored embedding has dim {vec.size}, "
                f"provider expects {provider.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise DataError(f"subject '{subject.id}': non-finite stored embedding")
        return vec
    if subject.text is None:
        raise DataError(f"subject '{subject.id}' has no clinical text")
    if provider.kind == "deterministic_stub":
        return _stub_vector(subject.text, provider.dim, provider.seed)
    # external: never fall back silently
    try:
        resp = requests.post(provider.endpoint, json={"text": subject.text},
                             timeout=provider.timeout)
        resp.raise_for_status()
        vec = np.asarray(resp.json()["vector"], dtype=float).ravel()
    except Exception as exc:
        raise ProviderError(
            f"external provider '{provider.name}' failed for subject "
            f"'{subject.id}': {exc}"
        ) from exc
    if vec.size != provider.dim or not np.all(np.isfinite(vec)):
        raise ProviderError(
            f"external provider '{provider.name}' returned a bad vector "
            f"(len {vec.size}, expected {provider.dim})"
        )
    return vec


def cohort_text_embeddings(cohort: Cohort, provider: TextEmbeddingProvider) -> np.ndarray:
    return np.stack([embed_text(s, provider) for s in cohort.subjects])


def text_similarity(embeddings: np.ndarray, subject_ids: list[str] | None = None) -> ViewSimilarity:
    """Cosine-similarity matrix over subject text embeddings."""
    sim = cosine_similarity_matrix(embeddings, what="subject row")
    return ViewSimilarity(values=sim, view="text", subject_ids=subject_ids)
