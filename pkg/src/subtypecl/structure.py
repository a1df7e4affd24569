"""Structure view: learned sparse brain-graph structures from BOLD series.

A stack of 1-D convolutions (batchnorm optional) embeds each ROI's time
series; pairwise cosine similarity of the ROI embeddings is the subject's
graph structure. The structures are fitted by gradient descent on an
L1-sparsity plus PCC-alignment objective and then frozen for all downstream
stages; subject-to-subject similarity is cosine over vectorized upper
triangles of the fitted structures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .artifacts import save_json, save_matrix_csv
from .cohort import Cohort, ConnectivityMatrix, compute_pcc
from .errors import ConfigError, DataError, NumericsError
from .views import ViewSimilarity, cosine_similarity_matrix

torch.set_default_dtype(torch.float64)


@dataclass
class EncoderConfig:
    n_layers: int = 3
    channels: tuple[int, ...] = (16, 16, 32)
    kernel_sizes: tuple[int, ...] = (7, 5, 3)
    embed_dim: int = 32
    use_batchnorm: bool = True
    temporal_bins: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if len(self.channels) != self.n_layers or len(self.kernel_sizes) != self.n_layers:
            raise ConfigError("channels and kernel_sizes must have n_layers entries")
        if self.embed_dim < 1 or self.temporal_bins < 1:
            raise ConfigError("embed_dim and temporal_bins must be >= 1")
        if any(k < 1 for k in self.kernel_sizes) or any(c < 1 for c in self.channels):
            raise ConfigError("channels and kernel sizes must be positive")

    @property
    def receptive_field(self) -> int:
        return 1 + sum(k - 1 for k in self.kernel_sizes)


class RoiSeriesEncoder(nn.Module):
    """Maps one ROI time series (length T) to an embed_dim vector.

    Conv features are averaged into a fixed number of temporal bins before the
    projection: cosine similarity between ROI embeddings then reflects whether
    two series co-vary in time (what the PCC alignment target measures), and
    the output dimension stays independent of T. Convolutions are unpadded, so
    T must be at least the receptive field. Construction is deterministic
    given config.seed.
    """

    def __init__(self, config: EncoderConfig):
        config.validate()
        super().__init__()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            convs, bns = [], []
            in_ch = 1
            for ch, k in zip(config.channels, config.kernel_sizes):
                convs.append(nn.Conv1d(in_ch, ch, k))
                bns.append(nn.BatchNorm1d(ch) if config.use_batchnorm else nn.Identity())
                in_ch = ch
            self.convs = nn.ModuleList(convs)
            self.bns = nn.ModuleList(bns)
            self.pool = nn.AdaptiveAvgPool1d(config.temporal_bins)
            self.proj = nn.Linear(in_ch * config.temporal_bins, config.embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, 1, T) -> (batch, embed_dim)
        if x.shape[-1] < self.config.receptive_field:
            raise ConfigError(
                f"series length {x.shape[-1]} shorter than the encoder receptive "
                f"field {self.config.receptive_field}"
            )
        for conv, bn in zip(self.convs, self.bns):
            x = torch.relu(bn(conv(x)))
        return self.proj(self.pool(x).flatten(1))


def encode_roi_series(series: np.ndarray, encoder: RoiSeriesEncoder) -> np.ndarray:
    """Evaluation-mode ROI embeddings for one subject; rows are h_r."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise DataError("series must be T_len x M")
    if not np.all(np.isfinite(series)):
        raise DataError("series contains non-finite values")
    x = torch.from_numpy(series.T.copy()).unsqueeze(1)  # (M, 1, T)
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        out = encoder(x).numpy()
    encoder.train(was_training)
    return out


def build_structure(embeddings: np.ndarray) -> np.ndarray:
    """Cosine-similarity graph over ROI embeddings; symmetric, unit diagonal."""
    emb = np.asarray(embeddings, dtype=float)
    norms = np.linalg.norm(emb, axis=1)
    zero = np.nonzero(norms == 0)[0]
    if zero.size:
        raise DataError(f"ROI {int(zero[0])} has a zero-norm embedding; cosine undefined")
    return cosine_similarity_matrix(emb, what="ROI")


def structure_loss(structures, pcc, lambda_vc: float) -> float:
    """Sum over subjects of ||S_i||_1 + lambda_vc * ||S_i - A_i||_F^2."""
    if lambda_vc < 0:
        raise ConfigError("lambda_vc must be >= 0")
    if len(structures) != len(pcc):
        raise DataError("structures and pcc lists must align by subject")
    total = 0.0
    for i, (s, a) in enumerate(zip(structures, pcc)):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        if s.shape != a.shape:
            raise DataError(f"subject {i}: structure shape {s.shape} != pcc shape {a.shape}")
        total += np.abs(s).sum() + lambda_vc * ((s - a) ** 2).sum()
    return float(total)


@dataclass
class StructureFitResult:
    structures: dict[str, ConnectivityMatrix]
    loss_trace: list[float]
    lambda_vc: float
    encoder: RoiSeriesEncoder = field(repr=False)
    config: EncoderConfig = field(repr=False)
    sparsity: float = 0.0  # fraction of off-diagonal |entries| < 1e-3

    def structure_for(self, series: np.ndarray, subject_id: str) -> ConnectivityMatrix:
        """Apply the frozen encoder to an unseen subject (e.g. a test fold)."""
        values = build_structure(encode_roi_series(series, self.encoder))
        return ConnectivityMatrix(values=values, kind="learned_structure", subject_id=subject_id)


def _subject_loss_terms(structures: torch.Tensor, pcc: torch.Tensor,
                        lambda_vc: float) -> torch.Tensor:
    l1 = structures.abs().sum(dim=(1, 2))
    fro = ((structures - pcc) ** 2).sum(dim=(1, 2))
    return l1 + lambda_vc * fro


def _batched_structures(encoder: RoiSeriesEncoder, series: torch.Tensor) -> torch.Tensor:
    """series: (n, M, T) -> cosine structures (n, M, M), differentiable."""
    n, m, t = series.shape
    h = encoder(series.reshape(n * m, 1, t)).reshape(n, m, -1)
    hn = h / h.norm(dim=2, keepdim=True).clamp_min(1e-12)
    return hn @ hn.transpose(1, 2)


def fit_structure_learner(cohort: Cohort, config: EncoderConfig, lambda_vc: float,
                          steps: int, lr: float = 1e-3, *,
                          optimizer: str = "sgd",
                          threads: int = 1) -> StructureFitResult:
    """Gradient-descend the sparsity+alignment objective over the encoder.

    Optimizes the subject-mean of the objective (learning rate independent of
    cohort size); the recorded trace is the subject sum. `optimizer` may be
    'sgd' (default) or 'adam'; adam keeps step sizes comparable when lambda_vc
    rescales the objective by orders of magnitude. Deterministic given
    config.seed with threads=1.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if lambda_vc < 0:
        raise ConfigError("lambda_vc must be >= 0")
    if optimizer not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer '{optimizer}'")
    if len(cohort) == 0:
        raise DataError("empty cohort")

    prev_threads = torch.get_num_threads()
    torch.set_num_threads(threads)
    try:
        encoder = RoiSeriesEncoder(config)
        pcc = {s.id: torch.from_numpy(compute_pcc(s).values) for s in cohort.subjects}
        # group subjects by series length so each group batches into one forward
        groups: dict[int, list] = {}
        for s in cohort.subjects:
            groups.setdefault(s.t_len, []).append(s)
        tensors = {
            t: (torch.from_numpy(np.stack([sub.series.T for sub in subs])),
                torch.stack([pcc[sub.id] for sub in subs]))
            for t, subs in groups.items()
        }

        if optimizer == "adam":
            opt = torch.optim.Adam(encoder.parameters(), lr=lr)
        else:
            opt = torch.optim.SGD(encoder.parameters(), lr=lr)
        trace: list[float] = []
        n = len(cohort)
        encoder.train()
        for step in range(steps):
            opt.zero_grad()
            total = torch.zeros(())
            for series, a in tensors.values():
                s = _batched_structures(encoder, series)
                total = total + _subject_loss_terms(s, a, lambda_vc).sum()
            value = float(total.detach())
            if not math.isfinite(value):
                raise NumericsError(
                    f"non-finite structure loss at step {step}",
                    step=step, trace=trace,
                )
            trace.append(value)
            (total / n).backward()
            opt.step()

        encoder.eval()
        structures: dict[str, ConnectivityMatrix] = {}
        off_small = []
        for s in cohort.subjects:
            values = build_structure(encode_roi_series(s.series, encoder))
            structures[s.id] = ConnectivityMatrix(
                values=values, kind="learned_structure", subject_id=s.id)
            off = values[~np.eye(values.shape[0], dtype=bool)]
            off_small.append(np.mean(np.abs(off) < 1e-3))
        return StructureFitResult(
            structures=structures, loss_trace=trace, lambda_vc=lambda_vc,
            encoder=encoder, config=config, sparsity=float(np.mean(off_small)),
        )
    finally:
        torch.set_num_threads(prev_threads)


def structure_similarity(structures, subject_ids: list[str] | None = None) -> ViewSimilarity:
    """Cosine similarity of vectorized upper triangles across subjects."""
    mats = [np.asarray(getattr(s, "values", s), dtype=float) for s in structures]
    if len(mats) < 2:
        raise DataError("structure similarity needs at least 2 subjects")
    m = mats[0].shape[0]
    iu = np.triu_indices(m, k=1)
    rows = np.stack([mat[iu] for mat in mats])
    norms = np.linalg.norm(rows, axis=1)
    for i, nrm in enumerate(norms):
        if nrm == 0:
            who = subject_ids[i] if subject_ids else f"index {i}"
            raise DataError(f"subject {who}: structure has all-zero off-diagonal; "
                            f"similarity undefined")
    sim = cosine_similarity_matrix(rows, what="subject")
    return ViewSimilarity(values=sim, view="structure", subject_ids=subject_ids)


def encoder_state_to_jsonable(encoder: RoiSeriesEncoder) -> dict:
    return {k: v.numpy().tolist() for k, v in encoder.state_dict().items()}


def encoder_state_from_jsonable(config: EncoderConfig, state: dict) -> RoiSeriesEncoder:
    encoder = RoiSeriesEncoder(config)
    encoder.load_state_dict({k: torch.tensor(v) for k, v in state.items()})
    encoder.eval()
    return encoder


def save_structure_fit(result: StructureFitResult, outdir: str | Path) -> None:
    """Per-subject CSV matrices + JSON sidecar, per the persistence contract."""
    outdir = Path(outdir)
    for sid, conn in result.structures.items():
        save_matrix_csv(outdir / f"{sid}.csv", conn.values)
    cfg = result.config
    save_json(outdir / "sidecar.json", {
        "lambda_vc": result.lambda_vc,
        "steps": len(result.loss_trace),
        "seed": cfg.seed,
        "final_loss": result.loss_trace[-1] if result.loss_trace else None,
        "loss_trace": result.loss_trace,
        "sparsity": result.sparsity,
        "encoder_config": {
            "n_layers": cfg.n_layers,
            "channels": list(cfg.channels),
            "kernel_sizes": list(cfg.kernel_sizes),
            "embed_dim": cfg.embed_dim,
            "use_batchnorm": cfg.use_batchnorm,
            "temporal_bins": cfg.temporal_bins,
            "seed": cfg.seed,
        },
        "encoder_state": encoder_state_to_jsonable(result.encoder),
    })
