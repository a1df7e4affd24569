"""Synthetic cohorts with planted subtypes, labels, and subtype-correlated text.

Subjects are sampled from a Gaussian factor model: ROIs are split into groups,
each subtype wires the groups to one of two latent factors in its own pattern,
and patients additionally load a class factor on a fixed ROI subset. Pearson
correlation of the resulting series therefore shows subtype-specific block
structure plus a class-specific offset, so both the clustering stages and the
classifier are genuinely exercised.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .artifacts import save_json
from .cohort import Cohort, Subject, save_cohort
from .errors import DataError


@dataclass
class SynthSpec:
    n_per_class: int = 60
    k_true: int = 3
    m_rois: int = 16
    t_len: int = 100
    block_strength: float = 1.0
    noise_sigma: float = 1.2
    text_vocab: int = 30
    seed: int = 0
    # secondary knobs, defaults frozen after pilot runs
    n_groups: int = 4
    class_strength: float = 0.6
    text_signal: float = 0.55
    doc_len: int = 20

    def validate(self) -> None:
        if self.k_true < 1:
            raise DataError("k_true must be >= 1")
        if self.n_per_class < self.k_true:
            raise DataError("n_per_class must be >= k_true")
        for name in ("m_rois", "t_len", "text_vocab", "n_groups", "doc_len"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")
        if self.block_strength <= 0:
            raise DataError("block_strength must be > 0")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


def _two_partitions(n_groups: int) -> list[tuple[int, ...]]:
    """Distinct group->factor assignments, balanced patterns first.

    An assignment and its complement give the same correlation pattern, so
    group 0 is pinned to factor 0 and factor-1 membership ranges over the
    nonempty subsets of the remaining groups.
    """
    patterns = []
    rest = list(range(1, n_groups))
    for size in range(1, n_groups):
        for members in combinations(rest, size):
            assign = tuple(1 if g in members else 0 for g in range(n_groups))
            patterns.append((abs(n_groups - 2 * size), assign))
    patterns.sort(key=lambda p: (p[0], p[1]))
    return [p[1] for p in patterns]


def _subtype_patterns(spec: SynthSpec) -> list[tuple[int, ...]]:
    candidates = _two_partitions(spec.n_groups)
    if spec.k_true > len(candidates):
        raise DataError(
            f"k_true={spec.k_true} exceeds the {len(candidates)} distinct factor "
            f"patterns available with n_groups={spec.n_groups}; raise n_groups"
        )
    return candidates[: spec.k_true]


def _roi_factor_map(spec: SynthSpec, pattern: tuple[int, ...]) -> np.ndarray:
    group_of = np.concatenate([
        np.full(len(chunk), gi, dtype=int)
        for gi, chunk in enumerate(np.array_split(np.arange(spec.m_rois), spec.n_groups))
    ])
    return np.array([pattern[g] for g in group_of], dtype=int)


def _sample_series(spec: SynthSpec, factor_of_roi: np.ndarray, label: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Factor-model series; the patient template is subtype-conditional.

    Patients gain an extra latent factor on their subtype's factor-1 ROI
    block, so the class signature lives in a different ROI set per subtype
    and the (class, subtype) pair owns its own connectivity template.
    """
    z = rng.standard_normal((spec.t_len, 2))
    eps = rng.standard_normal((spec.t_len, spec.m_rois))
    series = spec.block_strength * z[:, factor_of_roi] + spec.noise_sigma * eps
    if label == 1 and spec.class_strength > 0:
        w = rng.standard_normal(spec.t_len)
        series[:, factor_of_roi == 1] += spec.class_strength * w[:, None]
    return series


def _sample_text(spec: SynthSpec, subtype: int, rng: np.random.Generator) -> str:
    chunk_size = max(1, spec.text_vocab // max(1, spec.k_true))
    lo = (subtype * chunk_size) % spec.text_vocab
    preferred = [(lo + j) % spec.text_vocab for j in range(chunk_size)]
    tokens = []
    for _ in range(spec.doc_len):
        if rng.random() < spec.text_signal:
            tokens.append(f"tok{preferred[rng.integers(len(preferred))]:03d}")
        else:
            tokens.append(f"tok{rng.integers(spec.text_vocab):03d}")
    return " ".join(tokens)


def generate(spec: SynthSpec) -> tuple[Cohort, dict[int, dict[str, int]]]:
    """Sample a two-class cohort; returns (cohort, label -> {subject_id: subtype})."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    patterns = _subtype_patterns(spec)
    factor_maps = [_roi_factor_map(spec, p) for p in patterns]

    subjects: list[Subject] = []
    truth: dict[int, dict[str, int]] = {0: {}, 1: {}}
    for label, prefix in ((0, "hc"), (1, "pt")):
        subtypes = np.arange(spec.n_per_class) % spec.k_true
        rng.shuffle(subtypes)
        for i in range(spec.n_per_class):
            sid = f"{prefix}{i:04d}"
            sub = int(subtypes[i])
            series = None
            for attempt in range(3):
                cand = _sample_series(spec, factor_maps[sub], label, rng)
                if np.all(cand.std(axis=0) > 0):
                    series = cand
                    break
            if series is None:
                raise DataError(f"degenerate series for '{sid}' after 3 attempts")
            subjects.append(Subject(
                id=sid, label=label, series=series,
                text=_sample_text(spec, sub, rng),
            ))
            truth[label][sid] = sub
    cohort = Cohort(subjects=subjects, m_rois=spec.m_rois, name=f"synth-seed{spec.seed}")
    return cohort, truth


def write_cohort(cohort: Cohort, truth: dict[int, dict[str, int]],
                 outdir: str | Path, spec: SynthSpec | None = None) -> Path:
    """Emit a standard manifest directory plus ground_truth.json."""
    manifest = save_cohort(cohort, outdir)
    payload = {str(label): mapping for label, mapping in truth.items()}
    if spec is not None:
        payload["spec"] = asdict(spec)
    save_json(Path(outdir) / "ground_truth.json", payload)
    return manifest


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index between two partitions of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"partitions must be equal-length 1-D, got {a.shape} vs {b.shape}")
    n = a.size
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    contingency = np.zeros((a_idx.max() + 1, b_idx.max() + 1), dtype=np.int64)
    for i, j in zip(a_idx, b_idx):
        contingency[i, j] += 1
    sum_ij = sum(math.comb(int(nij), 2) for nij in contingency.ravel())
    sum_a = sum(math.comb(int(x), 2) for x in contingency.sum(axis=1))
    sum_b = sum(math.comb(int(x), 2) for x in contingency.sum(axis=0))
    total = math.comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0  # both partitions degenerate and identical in structure
    return float((sum_ij - expected) / (max_index - expected))
