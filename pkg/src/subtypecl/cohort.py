"""Cohort ingestion: ROI time series, labels, clinical text, PCC connectivity.

A cohort manifest is a JSON array of records
``{id, label, series_path, text_path?, text_embedding_path?}`` with paths
resolved relative to the manifest file. Series files are numeric CSV, rows =
time points, columns = ROIs, with an optional single header row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .artifacts import FLOAT_FMT, save_json
from .errors import DataError


class Violation(NamedTuple):
    code: str
    message: str


@dataclass
class Subject:
    """One participant: BOLD series (T_len x M), binary label, optional text."""

    id: str
    label: int
    series: np.ndarray
    text: str | None = None
    text_embedding: np.ndarray | None = None

    @property
    def t_len(self) -> int:
        return self.series.shape[0]

    @property
    def m_rois(self) -> int:
        return self.series.shape[1]


@dataclass
class ConnectivityMatrix:
    """An M x M connectivity matrix tagged with how it was produced."""

    values: np.ndarray
    kind: str  # "pcc" | "learned_structure"
    subject_id: str


@dataclass
class Cohort:
    """Ordered, immutable collection of subjects sharing one parcellation."""

    subjects: list[Subject]
    m_rois: int
    name: str = "cohort"
    _by_id: dict[str, Subject] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.subjects}

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self) -> Iterator[Subject]:
        return iter(self.subjects)

    def subject(self, subject_id: str) -> Subject:
        return self._by_id[subject_id]

    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=int)

    def ids_with_label(self, label: int) -> list[str]:
        return [s.id for s in self.subjects if s.label == label]

    def subset(self, ids: Sequence[str], name: str | None = None) -> "Cohort":
        """Sub-cohort in the given id order; unknown ids raise."""
        missing = [i for i in ids if i not in self._by_id]
        if missing:
            raise DataError(f"unknown subject ids in subset: {missing}")
        return Cohort(
            subjects=[self._by_id[i] for i in ids],
            m_rois=self.m_rois,
            name=name or self.name,
        )

    def require_both_labels(self) -> None:
        labels = set(int(s.label) for s in self.subjects)
        if labels != {0, 1}:
            raise DataError(
                f"cohort '{self.name}' needs at least one subject of each label "
                f"for supervised stages; found labels {sorted(labels)}"
            )


def validate_subject(subject: Subject, *, require_text: bool = False) -> list[Violation]:
    """Collect invariant violations; never raises."""
    out: list[Violation] = []
    series = np.asarray(subject.series)
    if series.ndim != 2:
        out.append(Violation("bad_series_shape", f"series must be 2-D, got ndim={series.ndim}"))
        return out
    t_len, m = series.shape
    if t_len < 2:
        out.append(Violation("short_series", f"T_len={t_len} < 2"))
    if m < 2:
        out.append(Violation("too_few_rois", f"M={m} < 2"))
    if not np.all(np.isfinite(series)):
        out.append(Violation("non_finite_series", "series contains NaN or Inf"))
    if subject.label not in (0, 1):
        out.append(Violation("invalid_label", f"label must be 0 or 1, got {subject.label!r}"))
    if require_text and subject.text is None and subject.text_embedding is None:
        out.append(Violation("missing_text", "text view enabled but neither text nor embedding present"))
    if subject.text_embedding is not None:
        emb = np.asarray(subject.text_embedding)
        if emb.ndim != 1 or not np.all(np.isfinite(emb)):
            out.append(Violation("bad_text_embedding", "text embedding must be a finite 1-D vector"))
    return out


def compute_pcc(subject: Subject) -> ConnectivityMatrix:
    """Pearson correlation between all ROI pairs of one subject.

    Sums are accumulated with math.fsum, which is exact and therefore invariant
    to the time ordering of the samples (time-reversed series give bitwise
    identical output).
    """
    series = np.asarray(subject.series, dtype=float)
    if series.ndim != 2 or series.shape[0] < 2:
        raise DataError(f"subject '{subject.id}': series must be T_len x M with T_len >= 2")
    t_len, m = series.shape
    cols = [series[:, j].tolist() for j in range(m)]
    means = [math.fsum(c) / t_len for c in cols]
    centered = [[x - mu for x in c] for c, mu in zip(cols, means)]
    sumsq = [math.fsum(x * x for x in c) for c in centered]
    for j, ss in enumerate(sumsq):
        if ss <= 0.0:
            raise DataError(
                f"subject '{subject.id}': ROI column {j} has zero variance; PCC undefined"
            )
    values = np.eye(m)
    for r in range(m):
        cr = centered[r]
        for s in range(r + 1, m):
            cs = centered[s]
            num = math.fsum(a * b for a, b in zip(cr, cs))
            corr = num / math.sqrt(sumsq[r] * sumsq[s])
            corr = min(1.0, max(-1.0, corr))
            values[r, s] = corr
            values[s, r] = corr
    return ConnectivityMatrix(values=values, kind="pcc", subject_id=subject.id)


def _read_series_csv(path: Path) -> np.ndarray:
    """Numeric CSV, rows = time points; tolerates one header row."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(tok) for tok in first.strip().split(",") if tok != ""]
    except ValueError:
        skip = 1
    try:
        return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except ValueError as exc:
        raise DataError(f"could not parse series file {path}: {exc}") from exc


def load_cohort(manifest_path: str | Path, name: str | None = None) -> Cohort:
    """Load and validate a cohort from a JSON manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list) or not records:
        raise DataError(f"manifest {manifest_path} must be a non-empty JSON array")
    root = manifest_path.parent

    subjects: list[Subject] = []
    seen: set[str] = set()
    for rec in records:
        sid = str(rec.get("id", ""))
        if not sid:
            raise DataError("manifest record without an 'id'")
        if sid in seen:
            raise DataError(f"duplicate subject id '{sid}' in manifest")
        seen.add(sid)
        series_path = root / rec["series_path"]
        if not series_path.exists():
            raise DataError(f"subject '{sid}': series file missing: {series_path}")
        series = _read_series_csv(series_path)
        text = None
        if rec.get("text_path"):
            text_path = root / rec["text_path"]
            if not text_path.exists():
                raise DataError(f"subject '{sid}': text file missing: {text_path}")
            text = text_path.read_text(encoding="utf-8")
        embedding = None
        if rec.get("text_embedding_path"):
            emb_path = root / rec["text_embedding_path"]
            if not emb_path.exists():
                raise DataError(f"subject '{sid}': embedding file missing: {emb_path}")
            embedding = np.loadtxt(emb_path, delimiter=",").ravel()
        subject = Subject(
            id=sid, label=int(rec["label"]), series=series,
            text=text, text_embedding=embedding,
        )
        bad = [v for v in validate_subject(subject) if v.code in ("non_finite_series", "invalid_label", "short_series", "too_few_rois", "bad_series_shape")]
        if bad:
            raise DataError(f"subject '{sid}': " + "; ".join(v.message for v in bad))
        subjects.append(subject)

    m_rois = subjects[0].m_rois
    mismatched = [s.id for s in subjects if s.m_rois != m_rois]
    if mismatched:
        raise DataError(
            f"ROI count mismatch: expected M={m_rois} (from '{subjects[0].id}'), "
            f"offending subjects: {mismatched}"
        )
    return Cohort(subjects=subjects, m_rois=m_rois, name=name or manifest_path.stem)


def save_cohort(cohort: Cohort, outdir: str | Path) -> Path:
    """Serialize a cohort as a self-contained manifest + CSV directory.

    Output bytes depend only on the cohort contents, so two loads of the same
    manifest serialize identically.
    """
    outdir = Path(outdir)
    (outdir / "series").mkdir(parents=True, exist_ok=True)
    records = []
    for s in cohort.subjects:
        series_rel = f"series/{s.id}.csv"
        np.savetxt(outdir / series_rel, np.asarray(s.series, dtype=float),
                   fmt=FLOAT_FMT, delimiter=",")
        rec = {"id": s.id, "label": int(s.label), "series_path": series_rel}
        if s.text is not None:
            (outdir / "texts").mkdir(exist_ok=True)
            text_rel = f"texts/{s.id}.txt"
            (outdir / text_rel).write_text(s.text, encoding="utf-8")
            rec["text_path"] = text_rel
        if s.text_embedding is not None:
            (outdir / "embeddings").mkdir(exist_ok=True)
            emb_rel = f"embeddings/{s.id}.csv"
            np.savetxt(outdir / emb_rel,
                       np.asarray(s.text_embedding, dtype=float).reshape(1, -1),
                       fmt=FLOAT_FMT, delimiter=",")
            rec["text_embedding_path"] = emb_rel
        records.append(rec)
    manifest = outdir / "manifest.json"
    save_json(manifest, records)
    return manifest
