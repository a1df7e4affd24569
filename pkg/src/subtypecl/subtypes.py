"""Subtype discovery: kNN graph + normalized spectral clustering per class."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cohort import Cohort
from .errors import ConfigError, DataError, NumericsError
from .fusion import FusedSimilarity

CONTROL_MODES = ("clustered", "single")


@dataclass
class SubtypeAssignment:
    class_label: int
    k: int
    assignment: dict[str, int]
    eigengap_trace: list[float] = field(default_factory=list)
    seed: int = 0

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for v in self.assignment.values():
            counts[v] += 1
        return counts

    def members(self, subtype: int) -> list[str]:
        return [sid for sid, v in self.assignment.items() if v == subtype]

    def to_jsonable(self) -> dict:
        return {
            "label": self.class_label,
            "k": self.k,
            "seed": self.seed,
            "assignment": self.assignment,
            "sizes": self.sizes(),
            "eigengap_trace": self.eigengap_trace,
        }


def knn_graph(fused: FusedSimilarity | np.ndarray, k: int) -> np.ndarray:
    """Keep each row's top-k off-diagonal entries; symmetrize by max."""
    values = fused.values if isinstance(fused, FusedSimilarity) else np.asarray(fused, dtype=float)
    n = values.shape[0]
    if not (1 <= k < n):
        raise ConfigError(f"knn k={k} out of range for N={n}")
    kept = np.zeros_like(values)
    for i in range(n):
        row = values[i].copy()
        row[i] = -np.inf
        nbrs = np.argsort(-row, kind="stable")[:k]
        kept[i, nbrs] = values[i, nbrs]
    graph = np.maximum(kept, kept.T)
    np.fill_diagonal(graph, 0.0)
    return graph


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float]:
    k = centers.shape[0]
    labels = np.full(x.shape[0], -1)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        # empty-cluster repair: move the point farthest from its center
        for j in range(k):
            if not np.any(new_labels == j):
                worst = int(np.argmax(d2[np.arange(x.shape[0]), new_labels]))
                new_labels[worst] = j
                d2[worst, :] = np.inf
                d2[worst, j] = 0.0
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(x: np.ndarray, k: int, seed: int, restarts: int = 50) -> np.ndarray:
    """Seeded k-means++ with restarts; ties by inertia then lexicographic centers."""
    x = np.asarray(x, dtype=float)
    if k > x.shape[0]:
        raise ConfigError(f"k={k} exceeds the number of points {x.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, centers, inertia = _lloyd(x, _kmeans_pp_init(x, k, rng))
        key = tuple(sorted(map(tuple, centers)))
        if best is None or (inertia, key) < (best[0], best[1]):
            best = (inertia, key, labels)
    return best[2]


def canonicalize_labels(labels: np.ndarray, member_keys: list | None = None) -> np.ndarray:
    """Relabel clusters by descending size; ties by smallest member key."""
    labels = np.asarray(labels)
    if member_keys is None:
        member_keys = list(range(len(labels)))
    order = []
    for lab in np.unique(labels):
        members = [member_keys[i] for i in np.nonzero(labels == lab)[0]]
        order.append((-len(members), min(members), lab))
    order.sort()
    remap = {old: new for new, (_, _, old) in enumerate(order)}
    return np.array([remap[v] for v in labels], dtype=int)


def _spectral_embedding(affinity: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = affinity.shape[0]
    degrees = affinity.sum(axis=1)
    isolated = np.nonzero(degrees <= 0)[0]
    if isolated.size:
        raise DataError(f"node {int(isolated[0])} is isolated (zero degree)")
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    lap = np.eye(n) - d_inv_sqrt[:, None] * affinity * d_inv_sqrt[None, :]
    lap = (lap + lap.T) / 2.0
    try:
        eigvals, eigvecs = scipy.linalg.eigh(lap)
    except scipy.linalg.LinAlgError as exc:
        raise NumericsError(
            "eigendecomposition of the normalized Laplacian failed",
            diagnostics={"n": n, "degree_min": float(degrees.min()),
                         "degree_max": float(degrees.max())},
        ) from exc
    embedding = eigvecs[:, :k]
    norms = np.linalg.norm(embedding, axis=1)
    safe = np.where(norms > 1e-12, norms, 1.0)
    return embedding / safe[:, None], eigvals


def spectral_cluster(affinity: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Normalized spectral clustering; labels canonical by size then position."""
    affinity = np.asarray(affinity, dtype=float)
    if k < 2:
        raise ConfigError("spectral clustering needs k >= 2")
    n = affinity.shape[0]
    if affinity.shape != (n, n) or np.max(np.abs(affinity - affinity.T)) > 1e-8:
        raise DataError("affinity must be square symmetric")
    if np.min(affinity) < -1e-12:
        raise DataError("affinity must be non-negative")
    if k > n:
        raise ConfigError(f"k={k} exceeds N={n}")
    embedding, _ = _spectral_embedding(affinity, k)
    labels = kmeans(embedding, k, seed)
    return canonicalize_labels(labels)


def discover_subtypes(cohort: Cohort, fused_per_class: dict[int, FusedSimilarity],
                      k: int, knn_k: int | None, seed: int, *,
                      control_subtypes: str = "clustered") -> dict[int, SubtypeAssignment]:
    """Per-class kNN graph + spectral clustering with shared k.

    knn_k=None uses ceil(log2(N_class)). With control_subtypes='single' the
    control class is one undifferentiated subtype (no clustering).
    """
    if control_subtypes not in CONTROL_MODES:
        raise ConfigError(f"control_subtypes must be one of {CONTROL_MODES}")
    out: dict[int, SubtypeAssignment] = {}
    present = sorted(set(int(s.label) for s in cohort.subjects))
    for label in present:
        ids = cohort.ids_with_label(label)
        n = len(ids)
        if label == 0 and control_subtypes == "single":
            out[0] = SubtypeAssignment(
                class_label=0, k=1, assignment={sid: 0 for sid in ids}, seed=seed)
            continue
        if label not in fused_per_class:
            raise DataError(f"no fused similarity provided for class {label}")
        if n < k:
            raise DataError(f"class {label} has {n} subjects, fewer than k={k}")
        fused = fused_per_class[label]
        if fused.values.shape[0] != n:
            raise DataError(
                f"class {label}: fused matrix is {fused.values.shape[0]}x..., "
                f"but the class has {n} subjects")
        kk = knn_k if knn_k is not None else max(1, math.ceil(math.log2(n)))
        kk = min(kk, n - 1)
        class_seed = int(np.random.SeedSequence([seed, label]).generate_state(1)[0])
        if k == n:
            raw = np.arange(n)  # pigeonhole: every subject its own subtype
        else:
            graph = knn_graph(fused, kk)
            embedding, eigvals = _spectral_embedding(graph, k)
            raw = kmeans(embedding, k, class_seed)
        labels = canonicalize_labels(raw, member_keys=ids)
        trace = []
        if k < n:
            head = eigvals[: min(len(eigvals), max(10, 2 * k))]
            trace = list(np.diff(head).astype(float))
        out[label] = SubtypeAssignment(
            class_label=label, k=k,
            assignment={sid: int(lab) for sid, lab in zip(ids, labels)},
            eigengap_trace=trace, seed=seed,
        )
    return out
