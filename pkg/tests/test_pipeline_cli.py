import json

import numpy as np
import pytest
import yaml

import subtypecl as scl
from subtypecl.cli import main
from subtypecl.config import RunConfig, config_from_dict, load_config

TINY_CFG = {
    "seed": 0,
    "structure": {
        "steps": 6,
        "encoder": {"n_layers": 1, "channels": [4], "kernel_sizes": [5],
                    "embed_dim": 6, "seed": 0},
    },
    "snf": {"iterations": 4, "k_neighbors": 3},
    "subtype": {"k": 2},
    "trainer": {
        "epochs": 2, "batch_size": 6, "momentum": 0.9, "queue_capacity": 16,
        "encoder": {"e2e_layers": 1, "e2e_channels": [4], "e2n_channels": 6,
                    "n2g_dim": 8, "embed_dim": 4, "seed": 1},
    },
    "eval": {"folds": 2},
    "synth": {"n_per_class": 10, "k_true": 2, "m_rois": 8, "t_len": 40, "seed": 3},
}


def write_cfg(tmp_path, overrides=None, name="cfg.yaml"):
    data = json.loads(json.dumps(TINY_CFG))
    data["paths"] = {"workdir": str(tmp_path / "work")}
    for key, value in (overrides or {}).items():
        node = data
        *parents, last = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[last] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def tree_bytes(root):
    # resolved_config.yaml echoes the input config (incl. the absolute workdir
    # path), so it is excluded from artifact-equality comparisons
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "resolved_config.yaml"}


class TestConfigCommand:
    def test_print_defaults_roundtrips(self, capsys):
        assert main(["config", "--print-defaults"]) == 0
        text = capsys.readouterr().out
        cfg = config_from_dict(yaml.safe_load(text))
        cfg.validate()
        assert cfg.subtype.k == 3  # default subtype count
        assert cfg.trainer.tau == 0.07

    def test_unknown_key_is_usage_error(self, tmp_path, capsys):
        path = write_cfg(tmp_path, {"subtype.bogus_key": 1})
        assert main(["config", "--config", str(path)]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_invalid_value_is_usage_error(self, tmp_path):
        path = write_cfg(tmp_path, {"snf.mu": 0.05})
        assert main(["ingest", "--config", str(path)]) == 2


class TestIngest:
    def test_synth_then_ingest(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["synth", "--config", str(path)]) == 0
        assert main(["ingest", "--config", str(path)]) == 0
        cache = tmp_path / "work" / "cohort"
        cohort = scl.load_cohort(cache / "manifest.json")
        assert len(cohort) == 20
        assert (cache / "validation.json").exists()

    def test_missing_series_file_exit_2_names_subject(self, tmp_path, capsys):
        manifest_dir = tmp_path / "data"
        manifest_dir.mkdir()
        (manifest_dir / "manifest.json").write_text(json.dumps(
            [{"id": "lost01", "label": 0, "series_path": "lost01.csv"}]))
        path = write_cfg(tmp_path, {"paths.manifest": str(manifest_dir / "manifest.json")})
        assert main(["ingest", "--config", str(path)]) == 2
        assert "lost01" in capsys.readouterr().err

    def test_aal_width_cohort_cache(self, tmp_path):
        manifest_dir = tmp_path / "aal"
        manifest_dir.mkdir()
        rng = np.random.default_rng(0)
        records = []
        for i in range(4):
            sid = f"a{i}"
            np.savetxt(manifest_dir / f"{sid}.csv",
                       rng.standard_normal((20, 116)), delimiter=",")
            records.append({"id": sid, "label": i % 2, "series_path": f"{sid}.csv"})
        (manifest_dir / "manifest.json").write_text(json.dumps(records))
        path = write_cfg(tmp_path, {
            "paths.manifest": str(manifest_dir / "manifest.json"),
            "eval.variant": "s",
        })
        assert main(["ingest", "--config", str(path)]) == 0
        cohort = scl.load_cohort(tmp_path / "work" / "cohort" / "manifest.json")
        assert cohort.m_rois == 116


class TestPipeline:
    def test_end_to_end_produces_metrics(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["evaluate", "--config", str(path), "--single-thread"]) == 0
        metrics = (tmp_path / "work" / "metrics.csv").read_text()
        assert metrics.startswith("variant,k,seed,fold,acc,auc,sen,spec")
        assert "full,2,0,mean" in metrics

    def test_force_rerun_is_byte_identical(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["evaluate", "--config", str(path), "--single-thread"]) == 0
        first = tree_bytes(tmp_path / "work")
        assert main(["evaluate", "--config", str(path), "--single-thread",
                     "--force"]) == 0
        second = tree_bytes(tmp_path / "work")
        assert first == second

    def test_variant_s_leaves_no_contrastive_artifacts(self, tmp_path):
        path = write_cfg(tmp_path, {"eval.variant": "s"})
        assert main(["evaluate", "--config", str(path)]) == 0
        fold0 = tmp_path / "work" / "fold_0"
        assert (fold0 / "views" / "skipped.json").exists()
        assert not list((fold0 / "fuse").glob("class*.csv"))
        assert not list((fold0 / "prototype").glob("class*.csv"))
        meta = json.loads((fold0 / "train" / "checkpoint" / "prototypes.json")
                          .read_text())
        assert meta == {}

    def test_stagewise_equals_single_invocation(self, tmp_path):
        (tmp_path / "staged").mkdir()
        (tmp_path / "direct").mkdir()
        staged_cfg = write_cfg(tmp_path / "staged", name="cfg.yaml")
        for stage in ("ingest", "structures", "views", "fuse", "subtype",
                      "prototype", "train", "evaluate"):
            assert main([stage, "--config", str(staged_cfg)]) == 0
        direct_cfg = write_cfg(tmp_path / "direct", name="cfg.yaml")
        assert main(["evaluate", "--config", str(direct_cfg)]) == 0
        staged = tree_bytes(tmp_path / "staged" / "work")
        direct = tree_bytes(tmp_path / "direct" / "work")
        assert staged == direct

    def test_pipeline_alias(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["pipeline", "--config", str(path)]) == 0
        assert (tmp_path / "work" / "metrics.csv").exists()


class TestAblateAndReport:
    def test_ablate_writes_summary_and_fold_jsons(self, tmp_path):
        path = write_cfg(tmp_path, {
            "eval.variants": ["s", "full"],
            "eval.k_sweep": [2],
        })
        assert main(["ablate", "--config", str(path)]) == 0
        outdir = tmp_path / "work" / "ablation"
        lines = (outdir / "summary.csv").read_text().strip().splitlines()
        assert lines[0].startswith("variant,k,acc_mean")
        assert len(lines) == 3  # header + s + full_k2
        assert (outdir / "s_seed0_fold0.json").exists()
        assert (outdir / "full_k2_seed0_fold1.json").exists()

    def test_empty_variant_list_is_usage_error(self, tmp_path):
        path = write_cfg(tmp_path, {"eval.variants": []})
        assert main(["ablate", "--config", str(path)]) == 2

    def test_report_before_pipeline_lists_missing(self, tmp_path, capsys):
        path = write_cfg(tmp_path)
        assert main(["synth", "--config", str(path)]) == 0
        assert main(["report", "--config", str(path)]) == 2
        assert "missing" in capsys.readouterr().err

    def test_report_after_pipeline(self, tmp_path):
        path = write_cfg(tmp_path)
        assert main(["evaluate", "--config", str(path)]) == 0
        assert main(["report", "--config", str(path), "--top-n", "5"]) == 0
        report = tmp_path / "work" / "report" / "fold_0"
        tops = sorted(report.glob("top_regions_*.csv"))
        assert len(tops) == 4  # 2 classes x k=2
        body = tops[0].read_text().strip().splitlines()
        assert body[0] == "rank,roi_index,roi_name,network,strength"
        assert len(body) == 6  # header + top-5
        assert (report / "embedding2d_class1.csv").exists()
        assert (report / "loss_trace.csv").exists()

    def test_roi_lookup_attached(self, tmp_path):
        lookup = tmp_path / "rois.csv"
        lookup.write_text("roi_index,name,network\n" + "\n".join(
            f"{i},ROI{i},NET{i % 3}" for i in range(8)) + "\n")
        path = write_cfg(tmp_path, {"paths.roi_lookup": str(lookup)})
        assert main(["evaluate", "--config", str(path)]) == 0
        assert main(["report", "--config", str(path)]) == 0
        body = (tmp_path / "work" / "report" / "fold_0" /
                "top_regions_class1_sub0.csv").read_text()
        assert "ROI" in body and "NET" in body
