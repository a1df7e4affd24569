import dataclasses
import math

import numpy as np
import pytest

import subtypecl as scl
from subtypecl.config import RunConfig
from subtypecl.errors import ConfigError, DataError
from subtypecl.evaluation import _fold_seeds

from conftest import make_subject


def dummy_cohort(n_pos, n_neg):
    rng = np.random.default_rng(0)
    subjects = [scl.Subject(id=f"s{i:04d}", label=1 if i < n_pos else 0,
                            series=rng.standard_normal((4, 3)))
                for i in range(n_pos + n_neg)]
    return scl.Cohort(subjects=subjects, m_rois=3)


class TestKfoldSplit:
    def test_balanced_ten_ten(self):
        cohort = dummy_cohort(10, 10)
        splits = scl.kfold_split(cohort, 5, seed=0)
        labels = {s.id: s.label for s in cohort.subjects}
        for _, test in splits:
            assert len(test) == 4
            assert sum(labels[i] for i in test) == 2

    def test_folds_cover_and_are_disjoint(self):
        cohort = dummy_cohort(13, 9)
        splits = scl.kfold_split(cohort, 5, seed=3)
        all_test = [i for _, test in splits for i in test]
        assert sorted(all_test) == sorted(cohort.ids())
        for train, test in splits:
            assert not set(train) & set(test)
            assert sorted(train + test) == sorted(cohort.ids())

    def test_class_smaller_than_folds_errors(self):
        cohort = dummy_cohort(3, 17)
        with pytest.raises(DataError, match="class 1"):
            scl.kfold_split(cohort, 5, seed=0)

    def test_abide_shaped_ratios_within_one(self):
        cohort = dummy_cohort(340, 468)
        splits = scl.kfold_split(cohort, 5, seed=1)
        labels = {s.id: s.label for s in cohort.subjects}
        for _, test in splits:
            n_pos = sum(labels[i] for i in test)
            n_neg = len(test) - n_pos
            assert abs(n_pos - 68) <= 1
            assert abs(n_neg - 93.6) <= 1

    def test_deterministic(self):
        cohort = dummy_cohort(8, 8)
        assert scl.kfold_split(cohort, 4, 7) == scl.kfold_split(cohort, 4, 7)


def auc_bruteforce(y, s):
    pos = [si for si, yi in zip(s, y) if yi == 1]
    neg = [si for si, yi in zip(s, y) if yi == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


class TestComputeMetrics:
    def test_perfect_scores(self):
        y = [0, 0, 1, 1]
        s = [0.1, 0.2, 0.9, 0.8]
        m = scl.compute_metrics(y, s)
        assert (m.acc, m.auc, m.sen, m.spec) == (1.0, 1.0, 1.0, 1.0)

    def test_inverted_scores(self):
        y = np.array([0, 1, 0, 1])
        s = 1.0 - y
        m = scl.compute_metrics(y, s.astype(float))
        assert m.acc == 0.0
        assert m.auc == 0.0

    def test_hand_case_matches_all_pairs_oracle(self):
        y = [0, 1, 0, 1, 1, 0, 1, 0]
        s = [0.1, 0.8, 0.5, 0.5, 0.9, 0.3, 0.3, 0.9]
        m = scl.compute_metrics(y, s)
        assert m.auc == auc_bruteforce(y, s)  # exact, ties by midrank

    def test_auc_equals_bruteforce_exactly_up_to_200(self):
        rng = np.random.default_rng(4)
        for n in (20, 117, 200):
            y = (rng.random(n) < 0.4).astype(int)
            if y.sum() in (0, n):
                y[0] = 1 - y[0]
            s = np.round(rng.random(n), 2)  # coarse grid forces ties
            m = scl.compute_metrics(y.tolist(), s.tolist())
            assert m.auc == auc_bruteforce(y.tolist(), s.tolist())

    def test_single_class_reports_others_auc_nan(self):
        m = scl.compute_metrics([1, 1, 1], [0.9, 0.4, 0.6])
        assert math.isnan(m.auc)
        assert m.acc == pytest.approx(2 / 3)
        assert m.sen == pytest.approx(2 / 3)
        assert math.isnan(m.spec)

    def test_scores_out_of_range_rejected(self):
        with pytest.raises(DataError):
            scl.compute_metrics([0, 1], [0.5, 1.2])

    def test_threshold_semantics(self):
        m = scl.compute_metrics([0, 1], [0.5, 0.5], threshold=0.5)
        assert m.tp == 1 and m.fp == 1  # score >= threshold predicts positive


class TestExportEmbedding2d:
    def test_planted_blocks_cluster_in_2d(self):
        rng = np.random.default_rng(5)
        n, block = 15, 5
        sim = np.full((n, n), 0.1)
        for b in range(3):
            sl = slice(b * block, (b + 1) * block)
            sim[sl, sl] = 0.9
        sim += rng.normal(0, 0.02, size=(n, n))
        sim = (sim + sim.T) / 2
        coords, _ = scl.export_embedding_2d(sim)
        within, cross = [], []
        for i in range(n):
            for j in range(i + 1, n):
                d = np.linalg.norm(coords[i] - coords[j])
                (within if i // block == j // block else cross).append(d)
        assert np.mean(within) < np.mean(cross)

    def test_two_subjects_rejected(self):
        with pytest.raises(DataError):
            scl.export_embedding_2d(np.eye(2))

    def test_identical_subjects_coincide(self):
        mat = np.tile(np.array([0.3, 0.5, 0.7, 0.1]), (4, 1))
        coords, _ = scl.export_embedding_2d(mat)
        assert np.abs(coords - coords[0]).max() < 1e-9

    def test_labels_attached_from_assignment(self):
        sim = np.eye(4) * 0.5 + 0.5
        assignment = {"a": 0, "b": 1, "c": 0, "d": 1}
        coords, labels = scl.export_embedding_2d(
            sim, assignment, subject_ids=["a", "b", "c", "d"])
        assert labels == [0, 1, 0, 1]

    def test_deterministic(self):
        mat = np.random.default_rng(6).standard_normal((6, 6))
        c1, _ = scl.export_embedding_2d(mat)
        c2, _ = scl.export_embedding_2d(mat)
        assert np.array_equal(c1, c2)


def fast_config(workdir="unused", folds=2):
    cfg = RunConfig()
    cfg.paths.workdir = workdir
    cfg.structure = dataclasses.replace(
        cfg.structure, steps=6,
        encoder=scl.EncoderConfig(n_layers=1, channels=(4,), kernel_sizes=(5,),
                                  embed_dim=6, seed=0))
    cfg.snf = dataclasses.replace(cfg.snf, iterations=4, k_neighbors=3)
    cfg.subtype = dataclasses.replace(cfg.subtype, k=2)
    cfg.trainer = scl.TrainerConfig(
        encoder=scl.ConnectomeEncoderConfig(e2e_layers=1, e2e_channels=(4,),
                                            e2n_channels=6, n2g_dim=8,
                                            embed_dim=4, seed=1),
        batch_size=6, epochs=2, momentum=0.9, queue_capacity=16, seed=0)
    cfg.eval = dataclasses.replace(cfg.eval, folds=folds)
    return cfg


@pytest.fixture(scope="module")
def eval_cohort():
    spec = scl.SynthSpec(n_per_class=12, k_true=2, m_rois=8, t_len=40, seed=9)
    cohort, _ = scl.generate(spec)
    return cohort


class TestRunVariant:
    def test_variant_s_has_zero_contrastive_trace(self, eval_cohort):
        cfg = fast_config()
        splits = scl.kfold_split(eval_cohort, 2, 0)
        res = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                           scl.VariantSpec("s"), cfg, _fold_seeds(0, 0, 0))
        assert all(h["contrastive"] == 0.0 for h in res.history)
        assert all(h["consistency"] == 0.0 or True for h in res.history)
        assert res.assignments is None

    def test_m_and_full_share_assignments_but_not_prototypes(self, eval_cohort):
        cfg = fast_config()
        splits = scl.kfold_split(eval_cohort, 2, 0)
        seeds = _fold_seeds(0, 0, 0)
        res_m = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                             scl.VariantSpec("m", 2), cfg, seeds)
        res_f = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                             scl.VariantSpec("full", 2), cfg, seeds)
        for label in res_f.assignments:
            assert res_m.assignments[label].assignment == \
                res_f.assignments[label].assignment
        protos_m = {(p.class_label, p.subtype): p.values for p in res_m.prototypes}
        protos_f = {(p.class_label, p.subtype): p.values for p in res_f.prototypes}
        assert any(not np.allclose(protos_m[k], protos_f[k]) for k in protos_f)
        assert all(p.attention_mode == "mean_only" for p in res_m.prototypes)

    def test_full_with_zero_weights_matches_s_bce_trace(self, eval_cohort):
        cfg = fast_config()
        cfg.trainer = dataclasses.replace(cfg.trainer, lambda_con=0.0, lambda_cr=0.0)
        splits = scl.kfold_split(eval_cohort, 2, 0)
        seeds = _fold_seeds(0, 0, 0)
        res_full = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                                scl.VariantSpec("full", 2), cfg, seeds)
        res_s = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                             scl.VariantSpec("s"), cfg, seeds)
        for hf, hs in zip(res_full.history, res_s.history):
            assert hf["bce"] == pytest.approx(hs["bce"], abs=1e-10)

    def test_single_view_variants_use_one_view(self, eval_cohort):
        cfg = fast_config()
        splits = scl.kfold_split(eval_cohort, 2, 0)
        seeds = _fold_seeds(0, 0, 0)
        res_t = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                             scl.VariantSpec("t", 2), cfg, seeds)
        res_g = scl.run_fold(eval_cohort, splits[0][0], splits[0][1],
                             scl.VariantSpec("g", 2), cfg, seeds)
        assert res_t.fused_per_class[1].views == ["text"]
        assert res_g.fused_per_class[1].views == ["structure"]

    def test_run_variant_aggregates_all_folds_and_seeds(self, eval_cohort):
        cfg = fast_config()
        report = scl.run_variant(eval_cohort, scl.VariantSpec("s"), [0, 1], cfg)
        assert len(report.entries) == 4  # 2 seeds x 2 folds
        assert 0.0 <= report.mean("acc") <= 1.0
        payload = report.to_jsonable()
        assert payload["variant"] == "s"
        assert len(payload["per_fold"]) == 4

    def test_variant_spec_validation(self):
        with pytest.raises(ConfigError):
            scl.VariantSpec("s", 3).validate()
        with pytest.raises(ConfigError):
            scl.VariantSpec("full").validate()
        with pytest.raises(ConfigError):
            scl.VariantSpec("bogus", 2).validate()
