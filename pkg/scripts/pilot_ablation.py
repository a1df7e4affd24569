"""Pilot grid for the ablation-ordering experiment (tuning scratchpad)."""

import argparse
import dataclasses
import time

import numpy as np

import subtypecl as scl
from subtypecl.config import RunConfig
from subtypecl.evaluation import VariantSpec, run_variant


def cfg_for(seed, lam_con, tau, lam_cr=0.05, embed=16, epochs=30, lr=1e-2,
            hard_ratio=0.5, momentum=0.9):
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
        hard_ratio=hard_ratio, batch_size=8, lr=lr, epochs=epochs,
        queue_capacity=64, seed=0)
    cfg.eval = dataclasses.replace(cfg.eval, folds=2)
    return cfg


def trial(lam_con, tau, noise, cs, seeds, variants, **kw):
    accs = {v: [] for v in variants}
    for i in range(seeds):
        spec = scl.SynthSpec(n_per_class=40, k_true=3, m_rois=12, t_len=60,
                             noise_sigma=noise, class_strength=cs, seed=1000 + i)
        cohort, _ = scl.generate(spec)
        cfg = cfg_for(i, lam_con, tau, **kw)
        for key in variants:
            if key.startswith("full"):
                spec_v = VariantSpec("full", int(key[4:]))
            elif key in ("m", "t", "g"):
                spec_v = VariantSpec(key, 3)
            else:
                spec_v = VariantSpec(key)
            rep = run_variant(cohort, spec_v, [i], cfg)
            accs[key].append(100 * rep.mean("acc"))
    return {k: round(float(np.mean(v)), 1) for k, v in accs.items()}, accs


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--combos", required=True,
                    help="semicolon list: lam,tau,noise,cs[,key=val...]")
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--variants", default="s,cl,full3")
    args = ap.parse_args()
    variants = args.variants.split(",")
    t0 = time.time()
    for combo in args.combos.split(";"):
        parts = combo.split(",")
        lam, tau, noise, cs = (float(x) for x in parts[:4])
        kw = {}
        for extra in parts[4:]:
            key, val = extra.split("=")
            kw[key] = float(val) if "." in val else int(val)
        means, _ = trial(lam, tau, noise, cs, args.seeds, variants, **kw)
        print(f"lam={lam} tau={tau} noise={noise} cs={cs} {kw}: {means}"
              f"  ({time.time() - t0:.0f}s)", flush=True)
