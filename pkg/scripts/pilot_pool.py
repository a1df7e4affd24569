"""Variant comparison with a large held-out eval pool (tuning scratchpad)."""

import argparse
import dataclasses
import time

import numpy as np

import subtypecl as scl
from subtypecl.config import RunConfig
from subtypecl.evaluation import VariantSpec, _fold_seeds, run_fold


def merged_cohorts(spec_kwargs, seed, n_train_per_class=40, n_eval_per_class=120):
    train_spec = scl.SynthSpec(n_per_class=n_train_per_class, seed=2000 + seed,
                               **spec_kwargs)
    eval_spec = scl.SynthSpec(n_per_class=n_eval_per_class, seed=7000 + seed,
                              **spec_kwargs)
    train_cohort, _ = scl.generate(train_spec)
    eval_cohort, _ = scl.generate(eval_spec)
    subjects = list(train_cohort.subjects)
    train_ids = [s.id for s in subjects]
    eval_subjects = []
    for s in eval_cohort.subjects:
        s = dataclasses.replace(s, id="ev_" + s.id)
        eval_subjects.append(s)
    test_ids = [s.id for s in eval_subjects]
    cohort = scl.Cohort(subjects=subjects + eval_subjects,
                        m_rois=train_spec.m_rois, name="pool")
    return cohort, train_ids, test_ids


def build_cfg(seed, lam_con, tau, lam_cr, epochs, lr, momentum=0.9, embed=16):
    cfg = RunConfig()
    cfg.seed = seed
    cfg.structure = dataclasses.replace(
        cfg.structure, steps=80, lr=1e-2, optimizer="adam", lambda_vc=1.0,
        encoder=scl.EncoderConfig(n_layers=2, channels=(8, 8), kernel_sizes=(7, 5),
                                  embed_dim=16, temporal_bins=8, seed=0))
    cfg.snf = dataclasses.replace(cfg.snf, iterations=10)
    cfg.prototype = dataclasses.replace(cfg.prototype, graph_source="pcc")
    cfg.trainer = scl.TrainerConfig(
        encoder=scl.ConnectomeEncoderConfig(e2e_layers=1, e2e_channels=(4,),
                                            e2n_channels=8, n2g_dim=16,
                                            embed_dim=embed, seed=0),
        tau=tau, lambda_con=lam_con, lambda_cr=lam_cr, momentum=momentum,
        hard_ratio=0.5, batch_size=8, lr=lr, epochs=epochs,
        queue_capacity=64, seed=0)
    cfg.eval = dataclasses.replace(cfg.eval, folds=2)
    return cfg


def run(seeds, variants, spec_kwargs, **cfg_kwargs):
    out = {v: [] for v in variants}
    for seed in range(seeds):
        cohort, train_ids, test_ids = merged_cohorts(spec_kwargs, seed)
        cfg = build_cfg(seed, **cfg_kwargs)
        for key in variants:
            if key.startswith("full"):
                spec_v = VariantSpec("full", int(key[4:]))
            elif key in ("m", "t", "g"):
                spec_v = VariantSpec(key, 3)
            else:
                spec_v = VariantSpec(key)
            res = run_fold(cohort, train_ids, test_ids, spec_v, cfg,
                           _fold_seeds(cfg.seed, seed, 0))
            out[key].append(100 * res.metrics.acc)
    return out


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--variants", default="s,cl,full3")
    ap.add_argument("--combos", required=True,
                    help="lam,tau,lam_cr,epochs,lr,noise,cs[;...]")
    args = ap.parse_args()
    variants = args.variants.split(",")
    t0 = time.time()
    for combo in args.combos.split(";"):
        lam, tau, lam_cr, epochs, lr, noise, cs = (float(x) for x in combo.split(","))
        spec_kwargs = dict(k_true=3, m_rois=12, t_len=60, noise_sigma=noise,
                           class_strength=cs)
        res = run(args.seeds, variants, spec_kwargs, lam_con=lam, tau=tau,
                  lam_cr=lam_cr, epochs=int(epochs), lr=lr)
        means = {k: round(float(np.mean(v)), 2) for k, v in res.items()}
        spread = {k: round(float(np.std(v)), 1) for k, v in res.items()}
        print(f"lam={lam} tau={tau} cr={lam_cr} ep={int(epochs)} lr={lr} "
              f"noise={noise} cs={cs}: {means} (sd {spread}) ({time.time()-t0:.0f}s)",
              flush=True)
