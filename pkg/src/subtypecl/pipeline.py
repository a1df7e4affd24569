"""Staged pipeline runner: every stage persists artifacts + a stage manifest.

A stage manifest records a content hash chaining the stage's config subsection
to its upstream stage, so a rerun resumes from the last completed stage whose
hash still matches (or recomputes everything under --force). No artifact
carries a timestamp; byte-level rerun and resumption equality are tested.
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np

from .artifacts import (
    load_json,
    load_matrix_csv,
    save_json,
    save_matrix_csv,
    stable_hash,
)
from .cohort import Cohort, load_cohort, save_cohort, validate_subject
from .config import RunConfig, config_to_dict
from .contrastive import load_checkpoint, predict_scores, save_checkpoint, train
from .errors import ConfigError, DataError
from .evaluation import (
    MetricEntry,
    VariantSpec,
    _fold_seeds,
    build_class_views,
    build_fold_prototypes,
    compute_graph_inputs,
    compute_metrics,
    fuse_class_views,
    kfold_split,
    text_provider_from_config,
    trainer_for_variant,
)
from .fusion import FusedSimilarity
from .prototypes import AttentionParams, PrototypeGraph, save_prototype
from .structure import (
    EncoderConfig,
    StructureFitResult,
    encoder_state_from_jsonable,
    fit_structure_learner,
    save_structure_fit,
)
from .subtypes import SubtypeAssignment, discover_subtypes
from .synth import generate, write_cohort

STAGES = ("ingest", "structures", "views", "fuse", "subtype", "prototype",
          "train", "evaluate")

FOLD_STAGES = STAGES[1:]


def _write_stage(path: Path, stage: str, digest: str, **extra) -> None:
    save_json(path / "stage.json", {"stage": stage, "hash": digest,
                                    "status": "done", **extra})


def _stage_done(path: Path, digest: str) -> bool:
    marker = path / "stage.json"
    if not marker.exists():
        return False
    try:
        data = load_json(marker)
    except Exception:
        return False
    return data.get("status") == "done" and data.get("hash") == digest


class PipelineRunner:
    def __init__(self, cfg: RunConfig, force: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.force = force
        self.workdir = Path(cfg.paths.workdir)
        variant = cfg.eval.variant
        k = cfg.subtype.k if variant in ("full", "m", "t", "g") else None
        self.spec = VariantSpec(variant, k)
        self.spec.validate()
        self.eval_seed = cfg.eval.seeds[0]
        self._cohort: Cohort | None = None
        self._splits = None
        self._fold_cache: dict[int, dict] = {}
        self._hashes: dict[str, str] = {}

    # ---- hashing -----------------------------------------------------------

    def _ingest_hash(self) -> str:
        if self.cfg.paths.manifest:
            payload = hashlib.sha256(Path(self._manifest_path()).read_bytes()).hexdigest()
            source = {"manifest_sha": payload}
        else:
            source = {"synth": dataclasses.asdict(self.cfg.synth)}
        return stable_hash({"stage": "ingest", "source": source})

    def _stage_hash(self, stage: str, fold: int) -> str:
        cfg = self.cfg
        sections = {
            "structures": dataclasses.asdict(cfg.structure),
            "views": {"text": dataclasses.asdict(cfg.text)},
            "fuse": dataclasses.asdict(cfg.snf),
            "subtype": dataclasses.asdict(cfg.subtype),
            "prototype": dataclasses.asdict(cfg.prototype),
            "train": dataclasses.asdict(cfg.trainer),
            "evaluate": {"threshold": cfg.eval.threshold},
        }
        upstream = self._hashes[self._prev_stage(stage)]
        return stable_hash({
            "stage": stage, "fold": fold, "upstream": upstream,
            "section": sections[stage], "seed": cfg.seed,
            "eval_seed": self.eval_seed, "folds": cfg.eval.folds,
            "variant": self.spec.name, "k": self.spec.k,
            "graph_source": cfg.prototype.graph_source,
        })

    @staticmethod
    def _prev_stage(stage: str) -> str:
        return STAGES[STAGES.index(stage) - 1]

    # ---- paths -------------------------------------------------------------

    def _manifest_path(self) -> Path:
        if self.cfg.paths.manifest:
            return Path(self.cfg.paths.manifest)
        return self.workdir / "synthetic" / "manifest.json"

    def fold_dir(self, fold: int) -> Path:
        return self.workdir / f"fold_{fold}"

    # ---- public driver -----------------------------------------------------

    def run_until(self, target: str) -> None:
        if target not in STAGES:
            raise ConfigError(f"unknown stage '{target}'; stages: {STAGES}")
        self.workdir.mkdir(parents=True, exist_ok=True)
        (self.workdir / "resolved_config.yaml").write_text(
            _resolved_config_yaml(self.cfg), encoding="utf-8")
        self.ensure_ingest()
        idx = STAGES.index(target)
        if idx >= 1:
            for stage in STAGES[1:idx + 1]:
                for fold in range(self.cfg.eval.folds):
                    self.ensure_fold_stage(stage, fold)
        if target == "evaluate":
            self._aggregate_metrics()

    # ---- ingest ------------------------------------------------------------

    def ensure_synth(self) -> Path:
        """Generate the synthetic cohort when no manifest is configured."""
        outdir = self.workdir / "synthetic"
        digest = stable_hash({"synth": dataclasses.asdict(self.cfg.synth)})
        if self.force or not _stage_done(outdir, digest):
            cohort, truth = generate(self.cfg.synth)
            write_cohort(cohort, truth, outdir, self.cfg.synth)
            _write_stage(outdir, "synth", digest)
        return outdir / "manifest.json"

    def ensure_ingest(self) -> Cohort:
        if self._cohort is not None:
            return self._cohort
        if not self.cfg.paths.manifest:
            self.ensure_synth()
        self._hashes["ingest"] = digest = self._ingest_hash()
        cache = self.workdir / "cohort"
        if self.force or not _stage_done(cache, digest):
            cohort = load_cohort(self._manifest_path())
            require_text = self.spec.name in ("full", "m", "t")
            report = {}
            for subject in cohort.subjects:
                violations = validate_subject(subject, require_text=require_text)
                if violations:
                    report[subject.id] = [{"code": v.code, "message": v.message}
                                          for v in violations]
            save_cohort(cohort, cache)
            save_json(cache / "validation.json", report)
            if report:
                raise DataError(f"cohort validation failed for subjects: {sorted(report)}")
            _write_stage(cache, "ingest", digest, n_subjects=len(cohort))
        self._cohort = load_cohort(cache / "manifest.json", name="cohort")
        splits_digest = stable_hash({"upstream": digest, "folds": self.cfg.eval.folds,
                                     "eval_seed": self.eval_seed})
        splits_path = self.workdir / "folds.json"
        if self.force or not splits_path.exists() or \
                load_json(splits_path).get("hash") != splits_digest:
            splits = kfold_split(self._cohort, self.cfg.eval.folds, self.eval_seed)
            save_json(splits_path, {
                "hash": splits_digest,
                "folds": [{"train": tr, "test": te} for tr, te in splits],
            })
        stored = load_json(splits_path)["folds"]
        self._splits = [(f["train"], f["test"]) for f in stored]
        return self._cohort

    # ---- per-fold stages ----------------------------------------------------

    def ensure_fold_stage(self, stage: str, fold: int) -> None:
        cohort = self.ensure_ingest()
        cache = self._fold_cache.setdefault(fold, {})
        digest = self._stage_hash(stage, fold)
        self._hashes[stage] = digest
        stage_dir = self.fold_dir(fold) / stage
        stage_dir.mkdir(parents=True, exist_ok=True)
        fresh = self.force or not _stage_done(stage_dir, digest)
        getattr(self, f"_stage_{stage}")(cohort, fold, cache, stage_dir, fresh)
        if fresh:
            _write_stage(stage_dir, stage, digest)

    def _fold_ids(self, fold: int) -> tuple[list[str], list[str]]:
        return self._splits[fold]

    def _seeds(self, fold: int) -> dict[str, int]:
        return _fold_seeds(self.cfg.seed, self.eval_seed, fold)

    def _needs_fit(self) -> bool:
        return (self.spec.name in ("full", "m", "g")
                or self.cfg.prototype.graph_source == "learned_structure")

    def _stage_structures(self, cohort, fold, cache, stage_dir, fresh):
        train_ids, _ = self._fold_ids(fold)
        if not self._needs_fit():
            if fresh:
                save_json(stage_dir / "skipped.json", {"reason": "variant needs no structure fit"})
            cache["fit"] = None
            return
        if not fresh and "fit" not in cache:
            cache["fit"] = _load_structure_fit(stage_dir, train_ids)
            return
        if fresh:
            enc_cfg = dataclasses.replace(self.cfg.structure.encoder,
                                          seed=self._seeds(fold)["structure"])
            fit = fit_structure_learner(
                cohort.subset(train_ids), enc_cfg, self.cfg.structure.lambda_vc,
                self.cfg.structure.steps, self.cfg.structure.lr,
                optimizer=self.cfg.structure.optimizer,
                threads=self.cfg.structure.threads)
            save_structure_fit(fit, stage_dir)
            cache["fit"] = fit

    def _graphs(self, cohort, fold, cache) -> dict[str, np.ndarray]:
        if "graphs" not in cache:
            train_ids, test_ids = self._fold_ids(fold)
            cache["graphs"] = compute_graph_inputs(
                cohort, list(train_ids) + list(test_ids),
                self.cfg.prototype.graph_source, cache.get("fit"))
        return cache["graphs"]

    def _labels_to_cluster(self) -> list[int]:
        labels = [1]
        if self.cfg.subtype.control_subtypes == "clustered":
            labels.insert(0, 0)
        return labels

    def _stage_views(self, cohort, fold, cache, stage_dir, fresh):
        if not self.spec.uses_subtypes:
            if fresh:
                save_json(stage_dir / "skipped.json", {"reason": "variant has no subtype views"})
            cache["views"] = None
            return
        train_ids, _ = self._fold_ids(fold)
        train_cohort = cohort.subset(train_ids)
        use_structure = self.spec.name in ("full", "m", "g")
        use_text = self.spec.name in ("full", "m", "t")
        if not fresh and "views" not in cache:
            cache["views"] = _load_views(stage_dir, train_cohort, self._labels_to_cluster())
            return
        if fresh:
            provider = text_provider_from_config(self.cfg) if use_text else None
            views = {}
            for label in self._labels_to_cluster():
                views[label] = build_class_views(
                    train_cohort, label, fit=cache.get("fit"), provider=provider,
                    use_structure=use_structure, use_text=use_text)
                for view in views[label]:
                    save_matrix_csv(stage_dir / f"class{label}_{view.view}.csv", view.values)
                    save_json(stage_dir / f"class{label}_{view.view}.json",
                              {"subject_ids": view.subject_ids, "view": view.view})
            cache["views"] = views

    def _stage_fuse(self, cohort, fold, cache, stage_dir, fresh):
        if not self.spec.uses_subtypes:
            if fresh:
                save_json(stage_dir / "skipped.json", {"reason": "variant has no fusion"})
            cache["fused"] = None
            return
        if not fresh and "fused" not in cache:
            cache["fused"] = _load_fused(stage_dir, self.cfg, self._labels_to_cluster())
            return
        if fresh:
            fused = {}
            for label, views in cache["views"].items():
                fused[label] = fuse_class_views(views, self.cfg)
                save_matrix_csv(stage_dir / f"class{label}.csv", fused[label].values)
                save_json(stage_dir / f"class{label}.json", {
                    "views": fused[label].views,
                    "subject_ids": fused[label].subject_ids,
                    "k_neighbors": self.cfg.snf.k_neighbors,
                    "iterations": self.cfg.snf.iterations,
                    "mu": self.cfg.snf.mu,
                    "kernelize": self.cfg.snf.kernelize,
                })
            cache["fused"] = fused

    def _stage_subtype(self, cohort, fold, cache, stage_dir, fresh):
        if not self.spec.uses_subtypes:
            if fresh:
                save_json(stage_dir / "skipped.json", {"reason": "variant has no subtypes"})
            cache["assignments"] = None
            return
        train_ids, _ = self._fold_ids(fold)
        if not fresh and "assignments" not in cache:
            cache["assignments"] = _load_assignments(stage_dir)
            return
        if fresh:
            assignments = discover_subtypes(
                cohort.subset(train_ids), cache["fused"], k=self.spec.k,
                knn_k=self.cfg.subtype.knn_k, seed=self._seeds(fold)["subtype"],
                control_subtypes=self.cfg.subtype.control_subtypes)
            save_json(stage_dir / "assignments.json",
                      {str(label): a.to_jsonable() for label, a in assignments.items()})
            for label, assign in assignments.items():
                if assign.eigengap_trace:
                    save_matrix_csv(stage_dir / f"eigengaps_class{label}.csv",
                                    np.asarray(assign.eigengap_trace))
            cache["assignments"] = assignments

    def _stage_prototype(self, cohort, fold, cache, stage_dir, fresh):
        if not self.spec.uses_subtypes:
            if fresh:
                save_json(stage_dir / "skipped.json", {"reason": "variant has no prototypes"})
            cache["prototypes"] = None
            cache["members"] = None
            return
        graphs = self._graphs(cohort, fold, cache)
        mode = "mean_only" if self.spec.name == "m" else self.cfg.prototype.mode
        params = None
        if mode == "learned":
            params = AttentionParams.init(cohort.m_rois, cohort.m_rois,
                                          self.cfg.prototype.proj_dim,
                                          seed=self._seeds(fold)["subtype"])
        if not fresh and "prototypes" not in cache:
            cache["prototypes"], cache["members"] = _load_prototypes(stage_dir, graphs)
            cache["attention_params"] = params
            return
        if fresh:
            prototypes, members = build_fold_prototypes(cache["assignments"], graphs, mode, params)
            for proto in prototypes:
                save_prototype(proto, stage_dir)
            save_json(stage_dir / "index.json", {
                "mode": mode,
                "keys": [[p.class_label, p.subtype] for p in prototypes],
            })
            cache["prototypes"] = prototypes
            cache["members"] = members
            cache["attention_params"] = params

    def _stage_train(self, cohort, fold, cache, stage_dir, fresh):
        train_ids, _ = self._fold_ids(fold)
        graphs = self._graphs(cohort, fold, cache)
        mode = "mean_only" if self.spec.name == "m" else self.cfg.prototype.mode
        if not fresh and "state" not in cache:
            cache["state"] = load_checkpoint(stage_dir / "checkpoint")
            cache["history"] = _load_history(stage_dir / "history.csv")
            return
        if fresh:
            trainer_cfg = trainer_for_variant(
                self.cfg.trainer, self.spec, self._seeds(fold), mode)
            state, history = train(
                cohort.subset(train_ids), graphs, cache.get("assignments"),
                cache.get("prototypes"), trainer_cfg,
                prototype_members=cache.get("members") if mode == "learned" else None,
                attention_init=cache.get("attention_params"))
            save_checkpoint(state, stage_dir / "checkpoint")
            _save_history(stage_dir / "history.csv", history)
            cache["state"] = state
            cache["history"] = history

    def _stage_evaluate(self, cohort, fold, cache, stage_dir, fresh):
        train_ids, test_ids = self._fold_ids(fold)
        if not fresh and "metrics" not in cache:
            cache["metrics"] = MetricEntry(**load_json(stage_dir / "metrics.json"))
            return
        if fresh:
            graphs = self._graphs(cohort, fold, cache)
            scores = predict_scores(cache["state"], graphs, test_ids)
            y_true = np.array([cohort.subject(sid).label for sid in test_ids])
            metrics = compute_metrics(y_true, scores, self.cfg.eval.threshold)
            with open(stage_dir / "scores.csv", "w", encoding="utf-8") as fh:
                fh.write("subject_id,label,score\n")
                for sid, y, sc in zip(test_ids, y_true, scores):
                    fh.write(f"{sid},{int(y)},{sc:.17g}\n")
            save_json(stage_dir / "metrics.json", metrics.to_jsonable())
            cache["metrics"] = metrics

    def _aggregate_metrics(self) -> Path:
        rows = []
        for fold in range(self.cfg.eval.folds):
            entry = self._fold_cache[fold]["metrics"]
            rows.append((fold, entry))
        out = self.workdir / "metrics.csv"
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("variant,k,seed,fold,acc,auc,sen,spec\n")
            for fold, e in rows:
                fh.write(f"{self.spec.name},{self.spec.k if self.spec.k else ''},"
                         f"{self.eval_seed},{fold},"
                         f"{100*e.acc:.6f},{100*e.auc:.6f},{100*e.sen:.6f},{100*e.spec:.6f}\n")
            means = {m: float(np.mean([getattr(e, m) for _, e in rows]))
                     for m in ("acc", "auc", "sen", "spec")}
            fh.write(f"{self.spec.name},{self.spec.k if self.spec.k else ''},"
                     f"{self.eval_seed},mean,"
                     f"{100*means['acc']:.6f},{100*means['auc']:.6f},"
                     f"{100*means['sen']:.6f},{100*means['spec']:.6f}\n")
        return out


def _resolved_config_yaml(cfg: RunConfig) -> str:
    from .config import dump_config
    return dump_config(cfg)


def _save_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,bce,consistency,contrastive,total\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['bce']:.17g},{row['consistency']:.17g},"
                     f"{row['contrastive']:.17g},{row['total']:.17g}\n")


def _load_history(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.strip().split(",")
            row = dict(zip(header, vals))
            rows.append({"epoch": int(row["epoch"]),
                         **{k: float(row[k]) for k in header[1:]}})
    return rows


def _load_structure_fit(stage_dir: Path, train_ids: list[str]) -> StructureFitResult:
    from .cohort import ConnectivityMatrix
    sidecar = load_json(stage_dir / "sidecar.json")
    ec = sidecar["encoder_config"]
    enc_cfg = EncoderConfig(
        n_layers=ec["n_layers"], channels=tuple(ec["channels"]),
        kernel_sizes=tuple(ec["kernel_sizes"]), embed_dim=ec["embed_dim"],
        use_batchnorm=ec["use_batchnorm"], temporal_bins=ec["temporal_bins"],
        seed=ec["seed"])
    encoder = encoder_state_from_jsonable(enc_cfg, sidecar["encoder_state"])
    structures = {}
    for sid in train_ids:
        values = load_matrix_csv(stage_dir / f"{sid}.csv")
        structures[sid] = ConnectivityMatrix(values=values, kind="learned_structure",
                                             subject_id=sid)
    return StructureFitResult(
        structures=structures, loss_trace=sidecar["loss_trace"],
        lambda_vc=sidecar["lambda_vc"], encoder=encoder, config=enc_cfg,
        sparsity=sidecar.get("sparsity", 0.0))


def _load_views(stage_dir: Path, train_cohort, labels: list[int]):
    from .views import ViewSimilarity
    views = {}
    for label in labels:
        class_views = []
        for tag in ("structure", "text"):
            csv = stage_dir / f"class{label}_{tag}.csv"
            if csv.exists():
                meta = load_json(stage_dir / f"class{label}_{tag}.json")
                class_views.append(ViewSimilarity(
                    values=load_matrix_csv(csv), view=tag,
                    subject_ids=meta["subject_ids"]))
        views[label] = class_views
    return views


def _load_fused(stage_dir: Path, cfg: RunConfig, labels: list[int]):
    fused = {}
    for label in labels:
        meta = load_json(stage_dir / f"class{label}.json")
        fused[label] = FusedSimilarity(
            values=load_matrix_csv(stage_dir / f"class{label}.csv"),
            config=cfg.snf, views=meta["views"], subject_ids=meta["subject_ids"])
    return fused


def _load_assignments(stage_dir: Path) -> dict[int, SubtypeAssignment]:
    out = {}
    for label_str, payload in load_json(stage_dir / "assignments.json").items():
        out[int(label_str)] = SubtypeAssignment(
            class_label=payload["label"], k=payload["k"],
            assignment={k: int(v) for k, v in payload["assignment"].items()},
            eigengap_trace=payload.get("eigengap_trace", []),
            seed=payload["seed"])
    return out


def _load_prototypes(stage_dir: Path, graphs: dict[str, np.ndarray]):
    index = load_json(stage_dir / "index.json")
    prototypes, members = [], {}
    for label, subtype in index["keys"]:
        stem = f"class{label}_sub{subtype}"
        meta = load_json(stage_dir / f"{stem}.json")
        proto = PrototypeGraph(
            values=load_matrix_csv(stage_dir / f"{stem}.csv"),
            class_label=label, subtype=subtype,
            member_ids=meta["members"], attention_mode=meta["mode"])
        prototypes.append(proto)
        members[(label, subtype)] = np.stack([np.asarray(graphs[sid], dtype=float)
                                              for sid in meta["members"]])
    return prototypes, members


# ---- ablation grid ----------------------------------------------------------

def ablation_specs(cfg: RunConfig) -> list[VariantSpec]:
    """Variant grid: s/cl take no k; full sweeps k_sweep; m/t/g use subtype.k."""
    specs = []
    for name in cfg.eval.variants:
        if name in ("s", "cl"):
            specs.append(VariantSpec(name))
        elif name == "full":
            for k in cfg.eval.k_sweep:
                specs.append(VariantSpec("full", k))
        else:
            specs.append(VariantSpec(name, cfg.subtype.k))
    if not specs:
        raise ConfigError("eval.variants is empty")
    return specs


def run_ablation(cfg: RunConfig, force: bool = False) -> Path:
    """Run the variant grid; one JSON per (variant, k, seed, fold) + summary CSV.

    A failing variant is recorded in errors.json and the rest continue.
    """
    from .evaluation import run_variant

    specs = ablation_specs(cfg)
    need_text = any(s.name in ("full", "m", "t") for s in specs)
    ingest_cfg = dataclasses.replace(
        cfg, eval=dataclasses.replace(cfg.eval, variant="full" if need_text else "s"))
    runner = PipelineRunner(ingest_cfg, force=force)
    runner.workdir.mkdir(parents=True, exist_ok=True)
    cohort = runner.ensure_ingest()

    outdir = Path(cfg.paths.workdir) / "ablation"
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = {}
    for spec in specs:
        tag = spec.name if spec.k is None else f"{spec.name}_k{spec.k}"
        try:
            report = run_variant(cohort, spec, cfg.eval.seeds, cfg)
        except Exception as exc:  # record and continue with the other variants
            failures[tag] = f"{type(exc).__name__}: {exc}"
            continue
        for seed, fold, entry in report.entries:
            save_json(outdir / f"{tag}_seed{seed}_fold{fold}.json", {
                "variant": spec.name, "k": spec.k, "seed": seed, "fold": fold,
                **entry.to_jsonable(),
            })
        rows.append((spec, report))
    summary = outdir / "summary.csv"
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("variant,k,acc_mean,acc_std,auc_mean,auc_std,"
                 "sen_mean,sen_std,spec_mean,spec_std\n")
        for spec, report in rows:
            cells = [spec.name, str(spec.k) if spec.k is not None else ""]
            for metric in ("acc", "auc", "sen", "spec"):
                cells.append(f"{100 * report.mean(metric):.6f}")
                cells.append(f"{100 * report.std(metric):.6f}")
            fh.write(",".join(cells) + "\n")
    if failures:
        save_json(outdir / "errors.json", failures)
    return summary


# ---- interpretability report -------------------------------------------------

def load_roi_lookup(path: str | Path) -> dict[int, dict]:
    """CSV with header roi_index,name,network -> {index: {roi_name, network}}."""
    lookup = {}
    with open(path, encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
        for line in fh:
            parts = [p.strip() for p in line.strip().split(",")]
            if not parts or parts == [""]:
                continue
            row = dict(zip(header, parts))
            lookup[int(row["roi_index"])] = {
                "roi_name": row.get("name", ""),
                "network": row.get("network", ""),
            }
    return lookup


def build_report(cfg: RunConfig, top_n: int | None = None) -> Path:
    """Emit top-region rankings, 2-D embeddings, and loss traces per fold."""
    from .evaluation import export_embedding_2d
    from .prototypes import top_regions

    workdir = Path(cfg.paths.workdir)
    top_n = top_n or cfg.prototype.top_regions_n
    lookup = load_roi_lookup(cfg.paths.roi_lookup) if cfg.paths.roi_lookup else None

    missing = []
    fold_dirs = sorted(workdir.glob("fold_*"))
    if not fold_dirs:
        missing.append("fold_* directories (run the pipeline first)")
    report_dir = workdir / "report"
    for fold_dir in fold_dirs:
        for stage in ("prototype", "fuse", "subtype", "train"):
            if not (fold_dir / stage / "stage.json").exists():
                missing.append(f"{fold_dir.name}/{stage}")
    if missing:
        raise DataError("report needs completed stages; missing: " + ", ".join(missing))

    for fold_dir in fold_dirs:
        out = report_dir / fold_dir.name
        out.mkdir(parents=True, exist_ok=True)
        proto_dir = fold_dir / "prototype"
        if (proto_dir / "index.json").exists():
            index = load_json(proto_dir / "index.json")
            for label, subtype in index["keys"]:
                stem = f"class{label}_sub{subtype}"
                meta = load_json(proto_dir / f"{stem}.json")
                proto = PrototypeGraph(
                    values=load_matrix_csv(proto_dir / f"{stem}.csv"),
                    class_label=label, subtype=subtype,
                    member_ids=meta["members"], attention_mode=meta["mode"])
                rows = top_regions(proto, min(top_n, proto.values.shape[0]), lookup)
                with open(out / f"top_regions_{stem}.csv", "w", encoding="utf-8") as fh:
                    fh.write("rank,roi_index,roi_name,network,strength\n")
                    for row in rows:
                        fh.write(f"{row['rank']},{row['roi_index']},"
                                 f"{row.get('roi_name', '')},{row.get('network', '')},"
                                 f"{row['strength']:.17g}\n")
        fuse_dir = fold_dir / "fuse"
        subtype_dir = fold_dir / "subtype"
        if (subtype_dir / "assignments.json").exists():
            assignments = _load_assignments(subtype_dir)
            for label, assign in assignments.items():
                csv = fuse_dir / f"class{label}.csv"
                if not csv.exists():
                    continue
                meta = load_json(fuse_dir / f"class{label}.json")
                values = load_matrix_csv(csv)
                if values.shape[0] < 3:
                    continue
                coords, labels_2d = export_embedding_2d(
                    values, assign, subject_ids=meta["subject_ids"])
                with open(out / f"embedding2d_class{label}.csv", "w", encoding="utf-8") as fh:
                    fh.write("subject_id,x,y,subtype\n")
                    for sid, (x, y), sub in zip(meta["subject_ids"], coords, labels_2d):
                        fh.write(f"{sid},{x:.17g},{y:.17g},{sub}\n")
                save_matrix_csv(out / f"fused_raw_class{label}.csv", values)
        history_csv = fold_dir / "train" / "history.csv"
        if history_csv.exists():
            (out / "loss_trace.csv").write_bytes(history_csv.read_bytes())
        sidecar = fold_dir / "structures" / "sidecar.json"
        if sidecar.exists():
            trace = load_json(sidecar).get("loss_trace", [])
            if trace:
                with open(out / "structure_loss_trace.csv", "w", encoding="utf-8") as fh:
                    fh.write("step,loss\n")
                    for i, v in enumerate(trace):
                        fh.write(f"{i},{v:.17g}\n")
    return report_dir
