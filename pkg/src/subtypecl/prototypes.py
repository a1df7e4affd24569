"""Subtype prototype graphs via dual-level self-attention + mean pooling.

Node-level attention mixes rows within each member graph; sample-level
attention then re-weights whole members against each other (on flattened
graphs); the prototype is the sample mean of the attended stack. Three modes:
parameter_free (Q=K=V=input, the default), learned (seeded Q/K projections,
V identity so prototypes remain weighted means of member graphs), and
mean_only (plain averaging, the prototype-ablation baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import save_json, save_matrix_csv
from .errors import ConfigError, DataError

ATTENTION_MODES = ("parameter_free", "learned", "mean_only")


@dataclass
class SampleGraph:
    values: np.ndarray  # M x D node-feature matrix
    subject_id: str


@dataclass
class PrototypeGraph:
    values: np.ndarray
    class_label: int
    subtype: int
    member_ids: list[str]
    attention_mode: str = "parameter_free"


@dataclass
class AttentionParams:
    """Q/K projections for learned mode (node level D x p, sample level MD x p)."""

    node_q: np.ndarray
    node_k: np.ndarray
    sample_q: np.ndarray
    sample_k: np.ndarray

    @classmethod
    def init(cls, m: int, d: int, proj_dim: int = 32, seed: int = 0) -> "AttentionParams":
        rng = np.random.default_rng(seed)
        p_node = min(proj_dim, d)
        p_sample = min(proj_dim, m * d)
        scale_n = 1.0 / np.sqrt(d)
        scale_s = 1.0 / np.sqrt(m * d)
        return cls(
            node_q=rng.standard_normal((d, p_node)) * scale_n,
            node_k=rng.standard_normal((d, p_node)) * scale_n,
            sample_q=rng.standard_normal((m * d, p_sample)) * scale_s,
            sample_k=rng.standard_normal((m * d, p_sample)) * scale_s,
        )


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_stack(stack: np.ndarray) -> np.ndarray:
    stack = np.asarray(stack, dtype=float)
    if stack.ndim != 3:
        raise DataError(f"expected a stack of shape (N_k, M, D), got {stack.shape}")
    if stack.shape[0] < 1:
        raise DataError("empty sample stack")
    if stack.shape[2] < 1:
        raise DataError("node feature dimension D must be >= 1")
    if not np.all(np.isfinite(stack)):
        raise DataError("stack contains non-finite values")
    return stack


def node_attention(stack: np.ndarray, params: AttentionParams | None = None) -> np.ndarray:
    """Scaled dot-product self-attention over the node axis, per sample."""
    stack = _check_stack(stack)
    d = stack.shape[2]
    out = np.empty_like(stack)
    for i, g in enumerate(stack):
        if params is None:
            scores = (g @ g.T) / np.sqrt(d)
        else:
            q, k = g @ params.node_q, g @ params.node_k
            scores = (q @ k.T) / np.sqrt(q.shape[1])
        out[i] = _softmax_rows(scores) @ g
    return out


def sample_attention(stack: np.ndarray, params: AttentionParams | None = None) -> np.ndarray:
    """Self-attention across samples on flattened member graphs."""
    stack = _check_stack(stack)
    n, m, d = stack.shape
    flat = stack.reshape(n, m * d)
    if params is None:
        scores = (flat @ flat.T) / np.sqrt(m * d)
    else:
        q, k = flat @ params.sample_q, flat @ params.sample_k
        scores = (q @ k.T) / np.sqrt(q.shape[1])
    return (_softmax_rows(scores) @ flat).reshape(n, m, d)


def build_prototype(members: list[SampleGraph], mode: str = "parameter_free",
                    params: AttentionParams | None = None, seed: int = 0,
                    class_label: int = 0, subtype: int = 0) -> PrototypeGraph:
    """Aggregate a subtype's member graphs into its prototype graph."""
    if mode not in ATTENTION_MODES:
        raise ConfigError(f"unknown attention mode '{mode}'")
    if not members:
        raise DataError("prototype needs at least one member")
    shapes = {np.asarray(m.values).shape for m in members}
    if len(shapes) != 1:
        raise DataError(f"member graphs disagree in shape: {sorted(shapes)}")
    stack = np.stack([np.asarray(m.values, dtype=float) for m in members])
    if mode == "mean_only":
        values = stack.mean(axis=0)
    else:
        if mode == "learned" and params is None:
            params = AttentionParams.init(stack.shape[1], stack.shape[2], seed=seed)
        attended = sample_attention(node_attention(stack, params), params)
        values = attended.mean(axis=0)
    return PrototypeGraph(
        values=values, class_label=class_label, subtype=subtype,
        member_ids=[m.subject_id for m in members], attention_mode=mode,
    )


def top_regions(prototype: PrototypeGraph, n: int = 10,
                roi_lookup: dict[int, dict] | None = None) -> list[dict]:
    """Rank ROIs by node strength (row sum of |H|); ties broken by lower index."""
    values = np.asarray(prototype.values, dtype=float)
    m = values.shape[0]
    if n > m:
        raise ConfigError(f"n={n} exceeds the number of ROIs {m}")
    strength = np.abs(values).sum(axis=1)
    order = np.argsort(-strength, kind="stable")[:n]
    rows = []
    for rank, roi in enumerate(order, start=1):
        row = {"rank": rank, "roi_index": int(roi), "strength": float(strength[roi])}
        if roi_lookup and int(roi) in roi_lookup:
            row.update(roi_lookup[int(roi)])
        rows.append(row)
    return rows


def save_prototype(proto: PrototypeGraph, outdir: str | Path) -> None:
    outdir = Path(outdir)
    stem = f"class{proto.class_label}_sub{proto.subtype}"
    save_matrix_csv(outdir / f"{stem}.csv", proto.values)
    save_json(outdir / f"{stem}.json", {
        "class": proto.class_label,
        "subtype": proto.subtype,
        "members": proto.member_ids,
        "mode": proto.attention_mode,
    })
