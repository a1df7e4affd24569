"""Evaluation harness: stratified CV, metrics, ablation variants, 2-D exports.

`run_fold` wires one train/test fold end to end (structures -> views -> fusion
-> subtypes -> prototypes -> contrastive training -> scoring), always fitting
every data-dependent stage on the training split only; test subjects touch
nothing but the frozen encoders and the classifier head.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import Cohort, compute_pcc
from .config import RunConfig, VARIANT_NAMES
from .contrastive import TrainerConfig, TrainState, predict_scores, train
from .errors import ConfigError, DataError
from .fusion import FusedSimilarity, affinity_from_similarity, snf_fuse
from .prototypes import AttentionParams, PrototypeGraph, SampleGraph, build_prototype
from .structure import StructureFitResult, fit_structure_learner, structure_similarity
from .subtypes import SubtypeAssignment, discover_subtypes
from .textview import TextEmbeddingProvider, cohort_text_embeddings, text_similarity
from .views import ViewSimilarity


@dataclass
class VariantSpec:
    name: str
    k: int | None = None

    def validate(self) -> None:
        if self.name not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant '{self.name}'")
        if self.name in ("s", "cl"):
            if self.k is not None:
                raise ConfigError(f"variant '{self.name}' takes no subtype count k")
        elif self.k is None or self.k < 2:
            raise ConfigError(f"variant '{self.name}' needs k >= 2")

    @property
    def uses_subtypes(self) -> bool:
        return self.name in ("full", "m", "t", "g")


@dataclass
class MetricEntry:
    acc: float
    auc: float
    sen: float
    spec: float
    threshold: float
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricReport:
    variant: str
    k: int | None
    entries: list[tuple[int, int, MetricEntry]] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(e, metric) for _, _, e in self.entries])

    def mean(self, metric: str) -> float:
        return float(np.mean(self.values(metric)))

    def std(self, metric: str) -> float:
        return float(np.std(self.values(metric)))

    def to_jsonable(self) -> dict:
        return {
            "variant": self.variant,
            "k": self.k,
            "per_fold": [{"seed": s, "fold": f, **e.to_jsonable()}
                         for s, f, e in self.entries],
            "mean": {m: self.mean(m) for m in ("acc", "auc", "sen", "spec")},
            "std": {m: self.std(m) for m in ("acc", "auc", "sen", "spec")},
        }


def kfold_split(cohort: Cohort, folds: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """Stratified k-fold; per class, shuffled ids are dealt round-robin."""
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    labels = cohort.labels()
    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    for label in sorted(set(labels.tolist())):
        ids = cohort.ids_with_label(label)
        if len(ids) < folds:
            raise DataError(
                f"class {label} has {len(ids)} subjects, fewer than {folds} folds")
        perm = rng.permutation(len(ids))
        for pos, idx in enumerate(perm):
            fold_of[ids[idx]] = pos % folds
    all_ids = cohort.ids()
    splits = []
    for j in range(folds):
        test = [sid for sid in all_ids if fold_of[sid] == j]
        trainset = [sid for sid in all_ids if fold_of[sid] != j]
        splits.append((trainset, test))
    return splits


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # 1-based midrank
        i = j + 1
    return ranks


def compute_metrics(y_true, y_score, threshold: float = 0.5) -> MetricEntry:
    """Confusion-matrix metrics at `threshold` plus midrank Mann-Whitney AUC."""
    y = np.asarray(y_true, dtype=int)
    s = np.asarray(y_score, dtype=float)
    if y.shape != s.shape:
        raise DataError("y_true and y_score must have equal length")
    if np.any((s < 0) | (s > 1)):
        raise DataError("scores must lie in [0, 1]")
    pred = (s >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    n_pos, n_neg = tp + fn, tn + fp
    acc = (tp + tn) / len(y) if len(y) else math.nan
    sen = tp / n_pos if n_pos else math.nan
    spec = tn / n_neg if n_neg else math.nan
    if n_pos and n_neg:
        ranks = _midranks(s)
        auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    else:
        auc = math.nan  # AUC undefined on a single-class fold
    return MetricEntry(acc=float(acc), auc=float(auc), sen=float(sen),
                       spec=float(spec), threshold=threshold,
                       tp=tp, tn=tn, fp=fp, fn=fn)


def _fold_seeds(run_seed: int, eval_seed: int, fold: int) -> dict[str, int]:
    children = np.random.SeedSequence([run_seed, eval_seed, fold]).generate_state(4)
    return {
        "structure": int(children[0]) % (2 ** 31),
        "subtype": int(children[1]) % (2 ** 31),
        "trainer": int(children[2]) % (2 ** 31),
        "encoder": int(children[3]) % (2 ** 31),
    }


def text_provider_from_config(cfg: RunConfig) -> TextEmbeddingProvider:
    return TextEmbeddingProvider(
        name=cfg.text.provider, dim=cfg.text.dim, kind=cfg.text.provider,
        seed=cfg.text.seed, endpoint=cfg.text.endpoint, timeout=cfg.text.timeout)


def compute_graph_inputs(cohort: Cohort, ids, source: str,
                         fit: StructureFitResult | None) -> dict[str, np.ndarray]:
    """Encoder input graph per subject: learned structure or PCC."""
    graphs = {}
    for sid in ids:
        subject = cohort.subject(sid)
        if source == "learned_structure":
            if fit is None:
                raise ConfigError("graph_source=learned_structure requires a structure fit")
            if sid in fit.structures:
                graphs[sid] = fit.structures[sid].values
            else:
                graphs[sid] = fit.structure_for(subject.series, sid).values
        else:
            graphs[sid] = compute_pcc(subject).values
    return graphs


def build_class_views(train_cohort: Cohort, label: int, *, fit: StructureFitResult | None,
                      provider: TextEmbeddingProvider | None,
                      use_structure: bool, use_text: bool) -> list[ViewSimilarity]:
    ids = train_cohort.ids_with_label(label)
    class_cohort = train_cohort.subset(ids)
    views = []
    if use_structure:
        mats = [fit.structures[sid].values for sid in ids]
        views.append(structure_similarity(mats, subject_ids=ids))
    if use_text:
        emb = cohort_text_embeddings(class_cohort, provider)
        views.append(text_similarity(emb, subject_ids=ids))
    return views


def fuse_class_views(views: list[ViewSimilarity], cfg: RunConfig) -> FusedSimilarity:
    """SNF for >= 2 views; a single view passes through its (kernelized) affinity."""
    snf_cfg = cfg.snf
    if snf_cfg.kernelize:
        affinities = [affinity_from_similarity(v, snf_cfg) for v in views]
    else:
        affinities = [(v.values + 1.0) / 2.0 for v in views]  # cosine -> [0, 1]
    ids = views[0].subject_ids
    if len(views) >= 2:
        fused = snf_fuse(affinities, snf_cfg, subject_ids=ids)
        fused.views = [v.view for v in views]
        return fused
    return FusedSimilarity(values=affinities[0], config=snf_cfg,
                           views=[views[0].view], subject_ids=ids)


def build_fold_prototypes(assignments: dict[int, SubtypeAssignment],
                          graphs: dict[str, np.ndarray], mode: str,
                          params: AttentionParams | None = None):
    prototypes: list[PrototypeGraph] = []
    members_of: dict[tuple[int, int], np.ndarray] = {}
    for label, assign in sorted(assignments.items()):
        for subtype in range(assign.k):
            ids = assign.members(subtype)
            members = [SampleGraph(values=graphs[sid], subject_id=sid) for sid in ids]
            prototypes.append(build_prototype(
                members, mode=mode, params=params,
                class_label=label, subtype=subtype))
            members_of[(label, subtype)] = np.stack(
                [np.asarray(m.values, dtype=float) for m in members])
    return prototypes, members_of


def trainer_for_variant(base: TrainerConfig, spec: VariantSpec,
                        seeds: dict[str, int], mode: str) -> TrainerConfig:
    encoder = dataclasses.replace(base.encoder, seed=seeds["encoder"])
    cfg = dataclasses.replace(base, encoder=encoder, seed=seeds["trainer"],
                              attention_mode=mode)
    if spec.name == "s":
        cfg = dataclasses.replace(cfg, lambda_con=0.0, lambda_cr=0.0)
    elif spec.name == "cl":
        cfg = dataclasses.replace(cfg, positive_source="queue")
    return cfg


@dataclass
class FoldResult:
    train_ids: list[str]
    test_ids: list[str]
    fit: StructureFitResult | None
    graphs: dict[str, np.ndarray]
    views_per_class: dict[int, list[ViewSimilarity]]
    fused_per_class: dict[int, FusedSimilarity]
    assignments: dict[int, SubtypeAssignment] | None
    prototypes: list[PrototypeGraph] | None
    state: TrainState
    history: list[dict]
    scores: np.ndarray
    metrics: MetricEntry


def run_fold(cohort: Cohort, train_ids: list[str], test_ids: list[str],
             spec: VariantSpec, cfg: RunConfig, seeds: dict[str, int]) -> FoldResult:
    spec.validate()
    train_cohort = cohort.subset(train_ids, name=f"{cohort.name}-train")
    train_cohort.require_both_labels()

    use_structure_view = spec.name in ("full", "m", "g")
    use_text_view = spec.name in ("full", "m", "t")
    need_fit = use_structure_view or cfg.prototype.graph_source == "learned_structure"

    fit = None
    if need_fit:
        enc_cfg = dataclasses.replace(cfg.structure.encoder, seed=seeds["structure"])
        fit = fit_structure_learner(
            train_cohort, enc_cfg, cfg.structure.lambda_vc,
            cfg.structure.steps, cfg.structure.lr,
            optimizer=cfg.structure.optimizer, threads=cfg.structure.threads)

    graphs = compute_graph_inputs(
        cohort, list(train_ids) + list(test_ids), cfg.prototype.graph_source, fit)

    views_per_class: dict[int, list[ViewSimilarity]] = {}
    fused_per_class: dict[int, FusedSimilarity] = {}
    assignments = None
    prototypes = None
    members_of = None
    attention_params = None
    mode = "mean_only" if spec.name == "m" else cfg.prototype.mode

    if spec.uses_subtypes:
        provider = text_provider_from_config(cfg) if use_text_view else None
        labels_to_cluster = [1]
        if cfg.subtype.control_subtypes == "clustered":
            labels_to_cluster.insert(0, 0)
        for label in labels_to_cluster:
            views = build_class_views(
                train_cohort, label, fit=fit, provider=provider,
                use_structure=use_structure_view, use_text=use_text_view)
            views_per_class[label] = views
            fused_per_class[label] = fuse_class_views(views, cfg)
        assignments = discover_subtypes(
            train_cohort, fused_per_class, k=spec.k, knn_k=cfg.subtype.knn_k,
            seed=seeds["subtype"], control_subtypes=cfg.subtype.control_subtypes)
        if mode == "learned":
            m = cohort.m_rois
            attention_params = AttentionParams.init(
                m, m, cfg.prototype.proj_dim, seed=seeds["subtype"])
        prototypes, members_of = build_fold_prototypes(
            assignments, graphs, mode, attention_params)

    trainer_cfg = trainer_for_variant(cfg.trainer, spec, seeds, mode)
    state, history = train(
        train_cohort, graphs, assignments, prototypes, trainer_cfg,
        prototype_members=members_of if mode == "learned" else None,
        attention_init=attention_params)

    scores = predict_scores(state, graphs, test_ids)
    y_true = np.array([cohort.subject(sid).label for sid in test_ids])
    metrics = compute_metrics(y_true, scores, cfg.eval.threshold)
    return FoldResult(
        train_ids=list(train_ids), test_ids=list(test_ids), fit=fit, graphs=graphs,
        views_per_class=views_per_class, fused_per_class=fused_per_class,
        assignments=assignments, prototypes=prototypes, state=state,
        history=history, scores=scores, metrics=metrics)


def run_variant(cohort: Cohort, spec: VariantSpec, seeds, cfg: RunConfig) -> MetricReport:
    """Stratified CV over every (seed, fold); aggregates the four metrics."""
    spec.validate()
    report = MetricReport(variant=spec.name, k=spec.k)
    for eval_seed in seeds:
        for fold_idx, (train_ids, test_ids) in enumerate(
                kfold_split(cohort, cfg.eval.folds, eval_seed)):
            fold_seeds = _fold_seeds(cfg.seed, eval_seed, fold_idx)
            result = run_fold(cohort, train_ids, test_ids, spec, cfg, fold_seeds)
            report.entries.append((eval_seed, fold_idx, result.metrics))
    return report


def export_embedding_2d(values, assignment=None, subject_ids=None, seed: int = 0):
    """Deterministic 2-D PCA of similarity rows (or any embedding matrix).

    Returns (coords N x 2, labels). Raw inputs stay available to callers for
    external projection tooling; this is only the built-in fallback view.
    """
    mat = values.values if isinstance(values, FusedSimilarity) else np.asarray(values, dtype=float)
    if isinstance(values, FusedSimilarity) and subject_ids is None:
        subject_ids = values.subject_ids
    if mat.ndim != 2 or mat.shape[0] < 3:
        raise DataError("2-D export needs at least 3 subjects")
    centered = mat - mat.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    coords = np.zeros((mat.shape[0], 2))
    for j in range(min(2, s.size)):
        comp = u[:, j] * s[j]
        pivot = int(np.argmax(np.abs(vt[j])))
        sign = 1.0 if vt[j, pivot] >= 0 else -1.0
        coords[:, j] = comp * sign
    labels = None
    if assignment is not None:
        mapping = assignment.assignment if isinstance(assignment, SubtypeAssignment) else dict(assignment)
        if subject_ids is None:
            raise DataError("subject ids required to attach subtype labels")
        labels = [mapping.get(sid) for sid in subject_ids]
    return coords, labels
