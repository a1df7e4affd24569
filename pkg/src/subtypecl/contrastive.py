"""Subtype-guided contrastive training of a connectome encoder.

The encoder follows the edge-to-edge / edge-to-node / node-to-graph filter
family for M x M connectivity inputs, with a linear head on the
pre-normalization embedding and L2-normalized embeddings feeding the
contrastive terms. A momentum copy of the encoder supplies queue entries and
prototype embeddings. The objective sums binary cross-entropy, a consistency
penalty between online and momentum embeddings, and an InfoNCE term whose
positive is the sample's subtype prototype embedding and whose negatives are
opposite-label queue entries (hard-mined) plus opposite-label prototypes.
"""

from __future__ import annotations

import base64
import copy
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .artifacts import load_json, save_json
from .cohort import Cohort
from .errors import ConfigError, DataError, NumericsError
from .prototypes import AttentionParams, PrototypeGraph
from .subtypes import SubtypeAssignment

torch.set_default_dtype(torch.float64)

LEAKY_SLOPE = 0.33


@dataclass
class ConnectomeEncoderConfig:
    e2e_layers: int = 1
    e2e_channels: tuple[int, ...] = (8,)
    e2n_channels: int = 16
    n2g_dim: int = 32
    embed_dim: int = 16
    head_bias: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")
        if self.e2e_layers < 1 or len(self.e2e_channels) != self.e2e_layers:
            raise ConfigError("e2e_channels must list one width per e2e layer")
        for name in ("e2n_channels", "n2g_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _uniform_(tensor: torch.Tensor, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        tensor.uniform_(-bound, bound)


class EdgeToEdge(nn.Module):
    """Cross-shaped edge filter: out(i,j) sums a row filter over row i and a
    column filter over column j."""

    def __init__(self, c_in: int, c_out: int, m: int):
        super().__init__()
        self.row = nn.Parameter(torch.empty(c_out, c_in, m))
        self.col = nn.Parameter(torch.empty(c_out, c_in, m))
        self.bias = nn.Parameter(torch.empty(c_out))
        fan_in = 2 * c_in * m
        _uniform_(self.row, fan_in)
        _uniform_(self.col, fan_in)
        _uniform_(self.bias, fan_in)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, C_in, M, M)
        r = torch.einsum("bcik,ock->boi", x, self.row)
        c = torch.einsum("bckj,ock->boj", x, self.col)
        return r.unsqueeze(3) + c.unsqueeze(2) + self.bias.view(1, -1, 1, 1)


class EdgeToNode(nn.Module):
    def __init__(self, c_in: int, c_out: int, m: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(c_out, c_in, m))
        self.bias = nn.Parameter(torch.empty(c_out))
        _uniform_(self.weight, c_in * m)
        _uniform_(self.bias, c_in * m)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, C, M, M) -> (B, O, M)
        return torch.einsum("bcik,ock->boi", x, self.weight) + self.bias.view(1, -1, 1)


class NodeToGraph(nn.Module):
    def __init__(self, c_in: int, dim: int, m: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dim, c_in, m))
        self.bias = nn.Parameter(torch.empty(dim))
        _uniform_(self.weight, c_in * m)
        _uniform_(self.bias, c_in * m)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, C, M) -> (B, dim)
        return torch.einsum("bci,oci->bo", x, self.weight) + self.bias


class ConnectomeEncoder(nn.Module):
    """Graph embedding + classification logit from an M x M connectivity matrix."""

    def __init__(self, config: ConnectomeEncoderConfig, m_rois: int):
        config.validate()
        super().__init__()
        self.config = config
        self.m_rois = m_rois
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            blocks = []
            c_in = 1
            for c_out in config.e2e_channels:
                blocks.append(EdgeToEdge(c_in, c_out, m_rois))
                c_in = c_out
            self.e2e = nn.ModuleList(blocks)
            self.e2n = EdgeToNode(c_in, config.e2n_channels, m_rois)
            self.n2g = NodeToGraph(config.e2n_channels, config.n2g_dim, m_rois)
            self.dense = nn.Linear(config.n2g_dim, config.embed_dim)
            self.head = nn.Linear(config.embed_dim, 1, bias=config.head_bias)

    def forward(self, x: torch.Tensor):
        # x: (B, M, M) -> pre (B, E), g normalized (B, E), logit (B,)
        if x.ndim == 3:
            x = x.unsqueeze(1)
        if x.shape[-2:] != (self.m_rois, self.m_rois):
            raise DataError(
                f"input graph must be {self.m_rois}x{self.m_rois}, got {tuple(x.shape[-2:])}")
        for blk in self.e2e:
            x = torch.nn.functional.leaky_relu(blk(x), LEAKY_SLOPE)
        x = torch.nn.functional.leaky_relu(self.e2n(x), LEAKY_SLOPE)
        x = torch.nn.functional.leaky_relu(self.n2g(x), LEAKY_SLOPE)
        pre = self.dense(x)
        g = pre / pre.norm(dim=1, keepdim=True).clamp_min(1e-12)
        logit = self.head(pre).squeeze(-1)
        return pre, g, logit


def encode(graph: np.ndarray, encoder: ConnectomeEncoder) -> tuple[np.ndarray, float]:
    """Evaluation-mode (normalized embedding, classifier logit) for one graph."""
    graph = np.asarray(graph, dtype=float)
    if graph.shape != (encoder.m_rois, encoder.m_rois):
        raise DataError(
            f"graph shape {graph.shape} != ({encoder.m_rois}, {encoder.m_rois})")
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        _, g, logit = encoder(torch.from_numpy(graph).unsqueeze(0))
    encoder.train(was_training)
    return g[0].numpy(), float(logit[0])


def momentum_update(theta_m, theta, m: float):
    """theta_m' = m * theta_m + (1 - m) * theta, elementwise; exact at m in {0, 1}."""
    if not (0.0 <= m <= 1.0):
        raise ConfigError(f"momentum must lie in [0, 1], got {m}")
    if hasattr(theta_m, "parameters"):
        dst, src = list(theta_m.parameters()), list(theta.parameters())
    else:
        dst, src = list(theta_m), list(theta)
    if len(dst) != len(src):
        raise DataError("parameter lists differ in length")
    out = []
    for pm, p in zip(dst, src):
        pm_t, p_t = torch.as_tensor(pm), torch.as_tensor(p)
        if pm_t.shape != p_t.shape:
            raise DataError(f"parameter shape mismatch: {tuple(pm_t.shape)} vs {tuple(p_t.shape)}")
        if m == 1.0:
            new = pm_t.detach().clone()
        elif m == 0.0:
            new = p_t.detach().clone()
        else:
            new = m * pm_t.detach() + (1.0 - m) * p_t.detach()
        if isinstance(pm, torch.nn.Parameter) or isinstance(pm, torch.Tensor):
            with torch.no_grad():
                pm_t.copy_(new)
            out.append(pm)
        else:
            out.append(new.numpy())
    return theta_m if hasattr(theta_m, "parameters") else out


@dataclass
class QueueEntry:
    embedding: np.ndarray
    subject_id: str
    label: int


@dataclass
class LabelQueue:
    label: int
    capacity: int
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        self.entries = deque(self.entries, maxlen=self.capacity)

    @property
    def size(self) -> int:
        return len(self.entries)

    def embeddings(self) -> list[np.ndarray]:
        return [e[0] for e in self.entries]

    def subject_ids(self) -> list[str]:
        return [e[1] for e in self.entries]


def enqueue(queue: LabelQueue, items: Sequence[QueueEntry]) -> LabelQueue:
    """FIFO append with capacity eviction; items must match the queue's label."""
    for item in items:
        if item.label != queue.label:
            raise DataError(
                f"label mismatch: queue holds label {queue.label}, "
                f"entry '{item.subject_id}' has label {item.label}")
        vec = np.asarray(item.embedding, dtype=float)
        if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
            raise DataError(f"entry '{item.subject_id}' is not L2-normalized")
        queue.entries.append((vec, item.subject_id))
    return queue


def hard_negative_select(anchor: np.ndarray, negatives: Sequence[np.ndarray],
                         rho: float) -> list:
    """Top ceil(rho * n) negatives by cosine similarity; ties keep queue order."""
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"hard-negative ratio must lie in (0, 1], got {rho}")
    if len(negatives) == 0:
        raise DataError("hard negative selection needs at least one negative")
    anchor = np.asarray(anchor, dtype=float)
    sims = np.array([float(np.dot(anchor, np.asarray(v, dtype=float))) for v in negatives])
    count = math.ceil(rho * len(negatives))
    order = np.argsort(-sims, kind="stable")[:count]
    return [negatives[i] for i in order]


def info_nce(g, positive, negatives, tau: float) -> torch.Tensor:
    """-log exp(sim(g,pos)/tau) / (exp(sim(g,pos)/tau) + sum_neg exp(sim(g,neg)/tau))."""
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    g = torch.as_tensor(g)
    pos = torch.as_tensor(positive)
    logits = [(g * pos).sum().view(1)]
    if len(negatives) > 0:
        negs = torch.stack([torch.as_tensor(v) for v in negatives])
        logits.append(negs @ g)
    logits = torch.cat(logits) / tau
    return torch.logsumexp(logits, dim=0) - logits[0]


@dataclass
class TrainerConfig:
    encoder: ConnectomeEncoderConfig = field(default_factory=ConnectomeEncoderConfig)
    tau: float = 0.07
    lambda_con: float = 0.5
    lambda_cr: float = 0.1
    momentum: float = 0.999
    hard_ratio: float = 0.5
    batch_size: int = 16
    lr: float = 1e-3
    epochs: int = 100
    queue_capacity: int = 256
    optimizer: str = "adam"
    positive_source: str = "prototype"  # "queue" = plain supervised CL
    attention_mode: str = "parameter_free"
    proj_dim: int = 32
    seed: int = 0

    def validate(self) -> None:
        self.encoder.validate()
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if not (0.0 <= self.momentum <= 1.0):
            raise ConfigError("momentum must lie in [0, 1]")
        if not (0.0 < self.hard_ratio <= 1.0):
            raise ConfigError("hard_ratio must lie in (0, 1]")
        if self.lambda_con < 0 or self.lambda_cr < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.queue_capacity < 1:
            raise ConfigError("batch_size, epochs and queue_capacity must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.positive_source not in ("prototype", "queue"):
            raise ConfigError(f"unknown positive source '{self.positive_source}'")


@dataclass
class BatchSample:
    subject_id: str
    graph: np.ndarray
    label: int
    subtype: int | None = None


class TorchAttention(nn.Module):
    """Differentiable twin of the prototype attention for learned mode."""

    def __init__(self, params: AttentionParams):
        super().__init__()
        self.node_q = nn.Parameter(torch.from_numpy(np.array(params.node_q)))
        self.node_k = nn.Parameter(torch.from_numpy(np.array(params.node_k)))
        self.sample_q = nn.Parameter(torch.from_numpy(np.array(params.sample_q)))
        self.sample_k = nn.Parameter(torch.from_numpy(np.array(params.sample_k)))

    def build_prototype(self, stack: torch.Tensor) -> torch.Tensor:
        n, m, d = stack.shape
        q = stack @ self.node_q
        k = stack @ self.node_k
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(q.shape[-1]), dim=-1)
        node_out = attn @ stack
        flat = node_out.reshape(n, m * d)
        qs = flat @ self.sample_q
        ks = flat @ self.sample_k
        attn_s = torch.softmax(qs @ ks.T / math.sqrt(qs.shape[-1]), dim=-1)
        return (attn_s @ flat).reshape(n, m, d).mean(dim=0)


@dataclass
class TrainState:
    encoder: ConnectomeEncoder
    momentum_encoder: ConnectomeEncoder
    queues: dict[int, LabelQueue]
    prototype_embeddings: dict[tuple[int, int], np.ndarray]
    hyper: TrainerConfig
    label_of: dict[str, int] = field(default_factory=dict)
    subtype_of: dict[str, int] = field(default_factory=dict)
    prototype_graphs: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    loss_traces: dict[str, list[float]] = field(default_factory=dict)
    attention: TorchAttention | None = None
    prototype_members: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


def _refresh_prototype_embeddings(state: TrainState) -> None:
    """Re-embed the (frozen) prototype graphs with the momentum encoder."""
    enc = state.momentum_encoder
    was_training = enc.training
    enc.eval()
    with torch.no_grad():
        for key, graph in state.prototype_graphs.items():
            _, g, _ = enc(torch.from_numpy(np.asarray(graph, dtype=float)).unsqueeze(0))
            state.prototype_embeddings[key] = g[0].numpy()
    enc.train(was_training)


def _learned_prototype_embeddings(state: TrainState) -> dict[tuple[int, int], torch.Tensor]:
    """Prototype embeddings through attention + online encoder (differentiable)."""
    out = {}
    for key, stack in state.prototype_members.items():
        graph = state.attention.build_prototype(torch.from_numpy(stack))
        _, g, _ = state.encoder(graph.unsqueeze(0))
        out[key] = g[0]
    return out


def _bce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    p = torch.sigmoid(logits).clamp(1e-7, 1.0 - 1e-7)
    return -(labels * torch.log(p) + (1.0 - labels) * torch.log(1.0 - p))


def _forward_objective(batch, state: TrainState, contrastive_mask=None, rng=None):
    cfg = state.hyper
    graphs = torch.stack([torch.from_numpy(np.asarray(s.graph, dtype=float)) for s in batch])
    labels = torch.tensor([float(s.label) for s in batch])
    pre, g, logits = state.encoder(graphs)
    with torch.no_grad():
        _, g_m, _ = state.momentum_encoder(graphs)

    bce = _bce(logits, labels)
    consistency = ((g - g_m.detach()) ** 2).sum(dim=1)

    proto_emb = None
    if state.attention is not None and cfg.positive_source == "prototype":
        proto_emb = _learned_prototype_embeddings(state)

    n = len(batch)
    contrastive = torch.zeros(n)
    for i, sample in enumerate(batch):
        if contrastive_mask is not None and not contrastive_mask[i]:
            continue
        y = sample.label
        if cfg.positive_source == "prototype":
            if sample.subtype is None:
                continue
            key = (y, sample.subtype)
            if proto_emb is not None:
                if key not in proto_emb:
                    raise ConfigError(f"no prototype for class {y} subtype {sample.subtype}")
                positive = proto_emb[key]
                proto_negs = [proto_emb[k] for k in sorted(proto_emb) if k[0] == 1 - y]
            else:
                if key not in state.prototype_embeddings:
                    raise ConfigError(f"no prototype for class {y} subtype {sample.subtype}")
                positive = torch.from_numpy(state.prototype_embeddings[key])
                proto_negs = [torch.from_numpy(state.prototype_embeddings[k])
                              for k in sorted(state.prototype_embeddings) if k[0] == 1 - y]
        else:
            same = state.queues[y].embeddings()
            if not same:
                continue
            if rng is None:
                raise ConfigError("queue-positive mode needs an RNG for positive sampling")
            positive = torch.from_numpy(same[int(rng.integers(len(same)))])
            proto_negs = []
        queue_negs = state.queues[1 - y].embeddings()
        anchor = g[i]
        selected = []
        if queue_negs:
            selected = hard_negative_select(
                anchor.detach().numpy(), queue_negs, cfg.hard_ratio)
            selected = [torch.from_numpy(v) for v in selected]
        negatives = selected + list(proto_negs)
        contrastive[i] = info_nce(anchor, positive, negatives, cfg.tau)

    total = (bce + cfg.lambda_cr * consistency + cfg.lambda_con * contrastive).mean()
    breakdown = {
        "bce": float(bce.mean().detach()),
        "consistency": float(consistency.mean().detach()),
        "contrastive": float(contrastive.mean().detach()),
        "total": float(total.detach()),
    }
    return total, breakdown, g_m.numpy()


def total_loss(batch: Sequence[BatchSample], state: TrainState,
               contrastive_mask=None, rng=None):
    """Batch mean of BCE + lambda_cr * consistency + lambda_con * InfoNCE."""
    for s in batch:
        if s.label not in (0, 1):
            raise DataError(f"sample '{s.subject_id}' has invalid label {s.label}")
    loss, breakdown, _ = _forward_objective(batch, state, contrastive_mask, rng)
    return loss, breakdown


def train(cohort: Cohort, graphs: dict[str, np.ndarray],
          assignments: dict[int, SubtypeAssignment] | None,
          prototypes: list[PrototypeGraph] | None,
          config: TrainerConfig,
          prototype_members: dict[tuple[int, int], np.ndarray] | None = None,
          attention_init: AttentionParams | None = None):
    """Train encoder + momentum encoder on the training split.

    Returns (TrainState, history) where history holds per-epoch means of each
    objective term. Deterministic given config seeds in single-threaded mode.
    The contrastive term of a sample stays off until the opposite-label queue
    holds at least one batch of entries.
    """
    config.validate()
    cohort.require_both_labels()
    subtype_of: dict[str, int] = {}
    if assignments:
        for assign in assignments.values():
            subtype_of.update(assign.assignment)

    encoder = ConnectomeEncoder(config.encoder, cohort.m_rois)
    momentum_encoder = copy.deepcopy(encoder)
    for p in momentum_encoder.parameters():
        p.requires_grad_(False)

    state = TrainState(
        encoder=encoder,
        momentum_encoder=momentum_encoder,
        queues={0: LabelQueue(0, config.queue_capacity),
                1: LabelQueue(1, config.queue_capacity)},
        prototype_embeddings={},
        hyper=config,
        label_of={s.id: int(s.label) for s in cohort.subjects},
        subtype_of=subtype_of,
        loss_traces={"bce": [], "consistency": [], "contrastive": [], "total": []},
    )
    if prototypes:
        for proto in prototypes:
            state.prototype_graphs[(proto.class_label, proto.subtype)] = np.asarray(
                proto.values, dtype=float)
        missing = {(state.label_of[sid], st) for sid, st in subtype_of.items()
                   if sid in state.label_of} - set(state.prototype_graphs)
        if missing and config.positive_source == "prototype":
            raise ConfigError(f"samples reference prototypes that were not built: {sorted(missing)}")

    use_learned = (config.attention_mode == "learned"
                   and config.positive_source == "prototype"
                   and prototype_members)
    if use_learned:
        state.prototype_members = {k: np.asarray(v, dtype=float)
                                   for k, v in prototype_members.items()}
        any_stack = next(iter(state.prototype_members.values()))
        params = attention_init or AttentionParams.init(
            any_stack.shape[1], any_stack.shape[2], config.proj_dim, config.seed)
        state.attention = TorchAttention(params)

    if state.prototype_graphs:
        _refresh_prototype_embeddings(state)

    missing_graphs = [s.id for s in cohort.subjects if s.id not in graphs]
    if missing_graphs:
        raise DataError(f"no input graph for subjects: {missing_graphs}")
    samples = [BatchSample(s.id, np.asarray(graphs[s.id], dtype=float), int(s.label),
                           subtype_of.get(s.id))
               for s in cohort.subjects]

    trainable = list(encoder.parameters())
    if state.attention is not None:
        trainable += list(state.attention.parameters())
    if config.optimizer == "adam":
        opt = torch.optim.Adam(trainable, lr=config.lr)
    else:
        opt = torch.optim.SGD(trainable, lr=config.lr)

    ss = np.random.SeedSequence(config.seed)
    shuffle_rng, pos_rng = [np.random.default_rng(child) for child in ss.spawn(2)]

    history: list[dict] = []
    n = len(samples)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        sums = {"bce": 0.0, "consistency": 0.0, "contrastive": 0.0, "total": 0.0}
        n_steps = 0
        for start in range(0, n, config.batch_size):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            mask = []
            for s in batch:
                ready = state.queues[1 - s.label].size >= config.batch_size
                if config.positive_source == "queue":
                    ready = ready and state.queues[s.label].size >= 1
                mask.append(ready)
            loss, breakdown, g_m = _forward_objective(batch, state, mask, pos_rng)
            if not math.isfinite(breakdown["total"]):
                raise NumericsError(
                    f"non-finite training loss at epoch {epoch} step {n_steps}",
                    step=(epoch, n_steps), trace=history,
                    diagnostics={"state": state, "breakdown": breakdown},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            momentum_update(momentum_encoder, encoder, config.momentum)
            for label in (0, 1):
                entries = [QueueEntry(g_m[i], batch[i].subject_id, batch[i].label)
                           for i in range(len(batch)) if batch[i].label == label]
                if entries:
                    enqueue(state.queues[label], entries)
            for key in sums:
                sums[key] += breakdown[key]
            n_steps += 1
        epoch_means = {k: v / max(1, n_steps) for k, v in sums.items()}
        epoch_means["epoch"] = epoch
        history.append(epoch_means)
        for key in ("bce", "consistency", "contrastive", "total"):
            state.loss_traces[key].append(epoch_means[key])
        if state.prototype_graphs and state.attention is None:
            _refresh_prototype_embeddings(state)
        elif state.attention is not None:
            # snapshot current learned prototypes for checkpoint/report use
            with torch.no_grad():
                for key, stack in state.prototype_members.items():
                    graph = state.attention.build_prototype(torch.from_numpy(stack))
                    state.prototype_graphs[key] = graph.numpy()
            _refresh_prototype_embeddings(state)
    return state, history


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def predict_scores(state: TrainState, graphs: dict[str, np.ndarray],
                   ids: Sequence[str]) -> np.ndarray:
    """Sigmoid classifier scores for the given subjects."""
    scores = []
    for sid in ids:
        _, logit = encode(graphs[sid], state.encoder)
        scores.append(_sigmoid(logit))
    return np.array(scores)


def _params_to_jsonable(module: nn.Module) -> dict:
    return {k: v.detach().numpy().tolist() for k, v in module.state_dict().items()}


def save_checkpoint(state: TrainState, outdir: str | Path) -> None:
    """Versioned, binary-free checkpoint directory."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = state.hyper
    save_json(outdir / "meta.json", {
        "version": 1,
        "m_rois": state.encoder.m_rois,
        "encoder": {
            "e2e_layers": cfg.encoder.e2e_layers,
            "e2e_channels": list(cfg.encoder.e2e_channels),
            "e2n_channels": cfg.encoder.e2n_channels,
            "n2g_dim": cfg.encoder.n2g_dim,
            "embed_dim": cfg.encoder.embed_dim,
            "head_bias": cfg.encoder.head_bias,
            "seed": cfg.encoder.seed,
        },
        "hyper": {
            "tau": cfg.tau, "lambda_con": cfg.lambda_con, "lambda_cr": cfg.lambda_cr,
            "momentum": cfg.momentum, "hard_ratio": cfg.hard_ratio,
            "batch_size": cfg.batch_size, "lr": cfg.lr, "epochs": cfg.epochs,
            "queue_capacity": cfg.queue_capacity, "optimizer": cfg.optimizer,
            "positive_source": cfg.positive_source,
            "attention_mode": cfg.attention_mode, "seed": cfg.seed,
        },
        "label_of": state.label_of,
        "subtype_of": state.subtype_of,
    })
    save_json(outdir / "params.json", _params_to_jsonable(state.encoder))
    save_json(outdir / "momentum_params.json", _params_to_jsonable(state.momentum_encoder))
    save_json(outdir / "queues.json", {
        str(label): {
            "capacity": q.capacity,
            "entries": [{"subject_id": sid, "embedding": vec.tolist()}
                        for vec, sid in q.entries],
        } for label, q in state.queues.items()
    })
    save_json(outdir / "prototypes.json", {
        f"{k[0]},{k[1]}": {
            "embedding": emb.tolist(),
            "graph": state.prototype_graphs.get(k, np.zeros(0)).tolist(),
        } for k, emb in state.prototype_embeddings.items()
    })
    save_json(outdir / "rng.json", {
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    })


def load_checkpoint(outdir: str | Path) -> TrainState:
    outdir = Path(outdir)
    meta = load_json(outdir / "meta.json")
    enc_cfg = ConnectomeEncoderConfig(
        e2e_layers=meta["encoder"]["e2e_layers"],
        e2e_channels=tuple(meta["encoder"]["e2e_channels"]),
        e2n_channels=meta["encoder"]["e2n_channels"],
        n2g_dim=meta["encoder"]["n2g_dim"],
        embed_dim=meta["encoder"]["embed_dim"],
        head_bias=meta["encoder"]["head_bias"],
        seed=meta["encoder"]["seed"],
    )
    hyper = TrainerConfig(encoder=enc_cfg, **meta["hyper"])
    encoder = ConnectomeEncoder(enc_cfg, meta["m_rois"])
    encoder.load_state_dict({k: torch.tensor(v)
                             for k, v in load_json(outdir / "params.json").items()})
    momentum_encoder = ConnectomeEncoder(enc_cfg, meta["m_rois"])
    momentum_encoder.load_state_dict({k: torch.tensor(v)
                                      for k, v in load_json(outdir / "momentum_params.json").items()})
    queues = {}
    for label_str, payload in load_json(outdir / "queues.json").items():
        q = LabelQueue(int(label_str), payload["capacity"])
        for entry in payload["entries"]:
            q.entries.append((np.array(entry["embedding"]), entry["subject_id"]))
        queues[int(label_str)] = q
    prototype_embeddings = {}
    prototype_graphs = {}
    for key_str, payload in load_json(outdir / "prototypes.json").items():
        label, subtype = (int(x) for x in key_str.split(","))
        prototype_embeddings[(label, subtype)] = np.array(payload["embedding"])
        graph = np.array(payload["graph"])
        if graph.size:
            prototype_graphs[(label, subtype)] = graph
    return TrainState(
        encoder=encoder, momentum_encoder=momentum_encoder, queues=queues,
        prototype_embeddings=prototype_embeddings, hyper=hyper,
        label_of={k: int(v) for k, v in meta["label_of"].items()},
        subtype_of={k: int(v) for k, v in meta["subtype_of"].items()},
        prototype_graphs=prototype_graphs,
    )
