import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import subtypecl as scl
from subtypecl.errors import DataError

from conftest import make_subject


def write_manifest(tmp_path, shapes, labels=None, ids=None):
    rng = np.random.default_rng(0)
    records = []
    for i, (t, m) in enumerate(shapes):
        sid = ids[i] if ids else f"s{i}"
        series = rng.standard_normal((t, m))
        np.savetxt(tmp_path / f"{sid}.csv", series, delimiter=",")
        records.append({"id": sid, "label": labels[i] if labels else i % 2,
                        "series_path": f"{sid}.csv"})
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps(records))
    return manifest


class TestLoadCohort:
    def test_three_subjects_passthrough(self, tmp_path):
        manifest = write_manifest(tmp_path, [(50, 8)] * 3)
        cohort = scl.load_cohort(manifest)
        assert len(cohort) == 3
        assert cohort.m_rois == 8
        assert cohort.ids() == ["s0", "s1", "s2"]  # manifest order

    def test_roi_mismatch_lists_offender(self, tmp_path):
        manifest = write_manifest(tmp_path, [(50, 8), (50, 9)])
        with pytest.raises(DataError, match="s1"):
            scl.load_cohort(manifest)

    def test_aal_parcellation_width(self, tmp_path):
        manifest = write_manifest(tmp_path, [(30, 116)] * 2)
        cohort = scl.load_cohort(manifest)
        assert cohort.m_rois == 116

    def test_missing_series_names_subject(self, tmp_path):
        manifest = write_manifest(tmp_path, [(20, 4)])
        (tmp_path / "s0.csv").unlink()
        with pytest.raises(DataError, match="s0"):
            scl.load_cohort(manifest)

    def test_non_finite_is_per_subject_error(self, tmp_path):
        manifest = write_manifest(tmp_path, [(20, 4)])
        series = np.zeros((20, 4))
        series[3, 2] = np.nan
        series[:, :2] = np.arange(40).reshape(20, 2)
        np.savetxt(tmp_path / "s0.csv", series, delimiter=",")
        with pytest.raises(DataError, match="s0"):
            scl.load_cohort(manifest)

    def test_header_row_tolerated(self, tmp_path):
        body = "\n".join(",".join(str(v) for v in row)
                         for row in np.random.default_rng(1).standard_normal((10, 3)))
        (tmp_path / "h.csv").write_text("roi_a,roi_b,roi_c\n" + body + "\n")
        (tmp_path / "manifest.json").write_text(json.dumps(
            [{"id": "h", "label": 0, "series_path": "h.csv"}]))
        cohort = scl.load_cohort(tmp_path / "manifest.json")
        assert cohort.subjects[0].series.shape == (10, 3)

    def test_load_is_byte_deterministic(self, tmp_path):
        manifest = write_manifest(tmp_path, [(25, 5)] * 2)
        c1 = scl.load_cohort(manifest)
        c2 = scl.load_cohort(manifest)
        scl.save_cohort(c1, tmp_path / "out1")
        scl.save_cohort(c2, tmp_path / "out2")
        for p1 in sorted((tmp_path / "out1").rglob("*")):
            if p1.is_file():
                p2 = tmp_path / "out2" / p1.relative_to(tmp_path / "out1")
                assert p1.read_bytes() == p2.read_bytes()


class TestComputePcc:
    def test_identical_columns_correlate_perfectly(self):
        col = np.random.default_rng(0).standard_normal(30)
        subject = make_subject(np.column_stack([col, col, col + 1.0]))
        pcc = scl.compute_pcc(subject)
        assert pcc.values[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert pcc.kind == "pcc"

    def test_negated_column_anticorrelates(self):
        col = np.random.default_rng(1).standard_normal(30)
        subject = make_subject(np.column_stack([col, -col]))
        assert scl.compute_pcc(subject).values[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_textbook_formula(self):
        # independent oracle: direct covariance / stddev computation
        rng = np.random.default_rng(7)
        series = rng.standard_normal((30, 4))
        got = scl.compute_pcc(make_subject(series)).values
        centered = series - series.mean(axis=0)
        cov = centered.T @ centered
        std = np.sqrt(np.diag(cov))
        expected = cov / np.outer(std, std)
        assert np.abs(got - expected).max() < 1e-12

    def test_zero_variance_column_names_roi(self):
        series = np.random.default_rng(2).standard_normal((20, 3))
        series[:, 1] = 4.2
        with pytest.raises(DataError, match="column 1"):
            scl.compute_pcc(make_subject(series))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_affine_rescale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        series = rng.standard_normal((15, 4))
        scale = rng.uniform(0.1, 10.0, size=4)
        shift = rng.uniform(-5, 5, size=4)
        base = scl.compute_pcc(make_subject(series)).values
        rescaled = scl.compute_pcc(make_subject(series * scale + shift)).values
        assert np.abs(base - rescaled).max() < 1e-9

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_time_reversal_is_bitwise_exact(self, seed):
        series = np.random.default_rng(seed).standard_normal((17, 5))
        forward = scl.compute_pcc(make_subject(series)).values
        backward = scl.compute_pcc(make_subject(series[::-1])).values
        assert np.array_equal(forward, backward)


class TestValidateSubject:
    def test_valid_subject_has_no_violations(self):
        subject = make_subject(np.random.default_rng(0).standard_normal((10, 3)))
        assert scl.validate_subject(subject) == []

    def test_nan_series_flagged(self):
        series = np.zeros((10, 3))
        series[0, 0] = np.nan
        codes = [v.code for v in scl.validate_subject(make_subject(series))]
        assert "non_finite_series" in codes

    def test_invalid_label_flagged(self):
        subject = make_subject(np.random.default_rng(0).standard_normal((10, 3)), label=2)
        codes = [v.code for v in scl.validate_subject(subject)]
        assert "invalid_label" in codes

    def test_text_requirement_only_when_enabled(self):
        subject = make_subject(np.random.default_rng(0).standard_normal((10, 3)))
        assert scl.validate_subject(subject) == []
        codes = [v.code for v in scl.validate_subject(subject, require_text=True)]
        assert "missing_text" in codes
