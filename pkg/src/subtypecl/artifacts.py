"""Deterministic on-disk artifact helpers (CSV matrices, canonical JSON).

Every writer here is byte-deterministic for identical inputs: fixed float
format, sorted JSON keys, no timestamps. Rerun/resume equality tests depend
on that.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def save_matrix_csv(path: str | Path, values: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, arr, fmt=FLOAT_FMT, delimiter=",")


def load_matrix_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_vector_csv(path: str | Path, values: np.ndarray) -> None:
    save_matrix_csv(path, np.asarray(values, dtype=float).reshape(1, -1))


def load_vector_csv(path: str | Path) -> np.ndarray:
    return load_matrix_csv(path).ravel()


def save_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def stable_hash(obj) -> str:
    """sha256 over the canonical JSON encoding of `obj`."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
