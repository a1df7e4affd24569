"""Per-epoch test-accuracy curves per variant (tuning scratchpad)."""

import dataclasses
import sys

import numpy as np

import subtypecl as scl
from subtypecl.config import RunConfig
from subtypecl.evaluation import (VariantSpec, _fold_seeds, build_fold_prototypes,
                                  build_class_views, compute_graph_inputs,
                                  discover_subtypes, fuse_class_views, kfold_split,
                                  text_provider_from_config, trainer_for_variant)


def curves(seed, lam_con, tau, noise, cs, epochs=40, probe_every=2):
    spec = scl.SynthSpec(n_per_class=40, k_true=3, m_rois=12, t_len=60,
                         noise_sigma=noise, class_strength=cs, seed=1000 + seed)
    cohort, truth = scl.generate(spec)
    cfg = RunConfig()
    cfg.seed = seed
    cfg.snf = dataclasses.replace(cfg.snf, iterations=10)
    cfg.prototype = dataclasses.replace(cfg.prototype, graph_source="pcc")
    cfg.structure = dataclasses.replace(
        cfg.structure, steps=80, lr=1e-2, optimizer="adam", lambda_vc=1.0,
        encoder=scl.EncoderConfig(n_layers=2, channels=(8, 8), kernel_sizes=(7, 5),
                                  embed_dim=16, temporal_bins=8, seed=0))
    base_trainer = scl.TrainerConfig(
        encoder=scl.ConnectomeEncoderConfig(e2e_layers=1, e2e_channels=(4,),
                                            e2n_channels=8, n2g_dim=16,
                                            embed_dim=16, seed=0),
        tau=tau, lambda_con=lam_con, lambda_cr=0.05, momentum=0.9, hard_ratio=0.5,
        batch_size=8, lr=1e-2, epochs=probe_every, queue_capacity=64, seed=0)
    cfg.trainer = base_trainer
    train_ids, test_ids = kfold_split(cohort, 2, seed)[0]
    train_cohort = cohort.subset(train_ids)
    seeds = _fold_seeds(seed, seed, 0)
    graphs = compute_graph_inputs(cohort, list(train_ids) + list(test_ids), "pcc", None)
    y_test = np.array([cohort.subject(i).label for i in test_ids])
    y_train = np.array([cohort.subject(i).label for i in train_ids])

    # subtype machinery once (shared by cl/full wiring where applicable)
    provider = text_provider_from_config(cfg)
    fused = {}
    for label in (0, 1):
        views = build_class_views(train_cohort, label, fit=None, provider=provider,
                                  use_structure=False, use_text=True)
        fused[label] = fuse_class_views(views, cfg)
    # use ground-truth subtypes to isolate the training mechanics from
    # clustering noise in this probe
    assigns = {l: scl.SubtypeAssignment(class_label=l, k=3,
                                        assignment={i: truth[l][i] for i in train_ids
                                                    if cohort.subject(i).label == l},
                                        seed=0) for l in (0, 1)}
    protos, members = build_fold_prototypes(assigns, graphs, "parameter_free")

    out = {}
    for name in ("s", "cl", "full"):
        spec_v = VariantSpec(name) if name in ("s", "cl") else VariantSpec(name, 3)
        accs = []
        # chain training manually in probe_every chunks is complex; instead train
        # fresh for each epoch budget (cheap at this scale)
        for total in range(probe_every, epochs + 1, probe_every):
            tc = trainer_for_variant(base_trainer, spec_v, seeds, "parameter_free")
            tc = dataclasses.replace(tc, epochs=total)
            state, _ = scl.train(train_cohort, graphs,
                                 assigns if name == "full" else None,
                                 protos if name == "full" else None, tc)
            sc = scl.predict_scores(state, graphs, test_ids)
            accs.append(round(100 * float(np.mean((sc >= .5) == y_test)), 1))
        out[name] = accs
    return out


if __name__ == "__main__":
    lam, tau, noise, cs = (float(x) for x in sys.argv[1:5])
    for seed in (0, 1):
        res = curves(seed, lam, tau, noise, cs)
        print(f"seed {seed}:")
        for name, accs in res.items():
            print(f"  {name:5s} {accs}")
