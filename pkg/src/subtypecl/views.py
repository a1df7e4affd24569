"""Shared subject-similarity containers and cosine helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

VIEW_TAGS = ("structure", "text", "fused")


@dataclass
class ViewSimilarity:
    """N x N subject-similarity matrix tagged with its view of origin."""

    values: np.ndarray
    view: str
    subject_ids: list[str] | None = None

    def __post_init__(self):
        if self.view not in VIEW_TAGS:
            raise DataError(f"unknown view tag '{self.view}'")

    @property
    def n(self) -> int:
        return self.values.shape[0]


def cosine_similarity_matrix(rows: np.ndarray, *, what: str = "row") -> np.ndarray:
    """Cosine similarity between all row pairs; zero rows are an error."""
    rows = np.asarray(rows, dtype=float)
    norms = np.linalg.norm(rows, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if zero.size:
        raise DataError(f"{what} {int(zero[0])} has zero norm; cosine undefined")
    unit = rows / norms[:, None]
    sim = unit @ unit.T
    sim = np.clip((sim + sim.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return sim
