"""Metric and report tests: AP tables, VSD, PCA, clustering, pipelines."""

import json

import numpy as np
import pytest

from poselatent import evaluation as E, inference as I, so3
from poselatent.errors import ConfigError, DimensionError
from poselatent.model import ModelConfig, init_params
from poselatent.synthscene import (ObjectSpec, desk_camera, desk_objects,
                                   generate_dataset, load_dataset,
                                   make_primitive, rasterize)

DEG = np.pi / 180.0


class TestAngularAp:
    def test_counting(self):
        ap = E.angular_ap(np.array([5, 15, 25]) * DEG, [20 * DEG])
        assert ap[0] == pytest.approx(2 / 3)

    def test_everything_within_half_turn(self):
        errs = np.random.default_rng(0).uniform(0, np.pi, 50)
        assert E.angular_ap(errs, [np.pi])[0] == 1.0

    def test_default_thresholds(self):
        assert E.DEFAULT_AP_THRESHOLDS_DEG == (5.0, 10.0, 15.0, 20.0, 30.0, 60.0)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        errs = rng.uniform(0, np.pi, 200)
        thresholds = np.sort(rng.uniform(0, np.pi, 20))
        ap = E.angular_ap(errs, thresholds)
        assert np.all(np.diff(ap) >= 0)

    def test_empty_gives_nan(self):
        ap = E.angular_ap([], [0.1, 0.2])
        assert np.all(np.isnan(ap))

    def test_nonfinite_rejected(self):
        with pytest.raises(DimensionError):
            E.angular_ap([0.1, np.nan], [0.2])

    def test_macro_average(self):
        errs = np.array([5, 5, 25, 35]) * DEG
        ids = np.array([0, 0, 1, 1])
        per, macro = E.angular_ap_by_object(errs, ids, 2, [30 * DEG])
        assert per[0, 0] == 1.0
        assert per[1, 0] == 0.5
        assert macro[0] == pytest.approx(0.75)

    def test_absent_object_skipped_in_macro(self):
        errs = np.array([5.0]) * DEG
        per, macro = E.angular_ap_by_object(errs, np.array([0]), 3, [10 * DEG])
        assert np.isnan(per[1]).all() and np.isnan(per[2]).all()
        assert macro[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            E.angular_ap_by_object([0.1, 0.2], [0], 1, [0.3])


class TestVsd:
    def test_identical_maps(self):
        d = np.array([[100.0, 200.0], [300.0, 0.0]])
        v = d > 0
        assert E.vsd(d, d, v, v) == 0.0

    def test_disjoint_silhouettes(self):
        a = np.zeros((2, 2))
        b = np.zeros((2, 2))
        a[0, 0] = 500.0
        b[1, 1] = 500.0
        assert E.vsd(a, b, a > 0, b > 0) == 1.0

    def test_quarter_mismatch(self):
        gt = np.full((2, 2), 400.0)
        est = gt.copy()
        est[0, 1] = 430.0                       # 30mm > 20mm tolerance
        assert E.vsd(est, gt, est > 0, gt > 0) == 0.25

    def test_tolerance_is_strict(self):
        gt = np.full((1, 2), 400.0)
        est = np.array([[400.0, 420.0]])        # exactly tol
        assert E.vsd(est, gt, est > 0, gt > 0) == 0.5

    def test_swap_symmetric(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(300, 500, (6, 6)) * (rng.random((6, 6)) > 0.3)
        b = rng.uniform(300, 500, (6, 6)) * (rng.random((6, 6)) > 0.3)
        assert E.vsd(a, b, a > 0, b > 0) == E.vsd(b, a, b > 0, a > 0)

    def test_empty_union(self):
        z = np.zeros((3, 3))
        assert E.vsd(z, z, z > 0, z > 0) == 0.0

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            E.vsd(np.zeros((2, 2)), np.zeros((3, 3)),
                  np.zeros((2, 2), bool), np.zeros((3, 3), bool))

    @pytest.mark.parametrize("obj_idx,spin", [
        (0, so3.quat_about_axis((0, 0, 1.0), 5 * 2 * np.pi / 48)),  # cylinder
        (1, so3.quat_about_axis((0, 0, 1.0), np.pi / 2)),           # 4-fold box
    ])
    def test_symmetry_invariance_through_renderer(self, obj_idx, spin):
        mesh, _ = make_primitive(desk_objects()[obj_idx])
        cam = desk_camera()
        t = np.array([0.0, 0.0, 400.0])
        q = so3.quat_from_view(0.3, 0.9, 1.2)
        _, d_gt = rasterize(mesh, q, t, cam)
        _, d_est = rasterize(mesh, so3.quat_multiply(q, spin), t, cam)
        assert E.vsd(d_est, d_gt, d_est > 0, d_gt > 0) < 1e-6

    def test_recall_counting(self):
        assert E.vsd_recall([0.0, 0.2, 0.5]) == pytest.approx(2 / 3)
        assert E.vsd_recall([0.0, 0.0, 0.0]) == 1.0

    def test_recall_strictness(self):
        assert E.vsd_recall([0.3], threshold=0.3) == 0.0
        assert E.vsd_recall([0.3 - 1e-9], threshold=0.3) == 1.0
        assert E.vsd_recall([0.1, 0.2], threshold=0.0) == 0.0

    def test_recall_empty(self):
        assert np.isnan(E.vsd_recall([]))


class TestPca:
    def test_coplanar_third_variance_zero(self):
        rng = np.random.default_rng(3)
        flat = rng.normal(size=(200, 2))
        codes = np.column_stack([flat, flat @ [0.5, -0.25]])
        _, var = E.pca_project(codes, out_dims=3)
        assert var[2] < 1e-8

    def test_isotropic_variances_close(self):
        codes = np.random.default_rng(4).normal(size=(10000, 3))
        _, var = E.pca_project(codes)
        assert var.max() / var.min() < 1.1

    def test_translation_invariance(self):
        codes = np.random.default_rng(5).normal(size=(100, 6))
        a, _ = E.pca_project(codes)
        b, _ = E.pca_project(codes + 7.5)
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_reconstruction_identity(self):
        codes = np.random.default_rng(6).normal(size=(400, 6)) @ np.diag(
            [3.0, 2.0, 1.5, 1.0, 0.5, 0.25])
        centered = codes - codes.mean(axis=0)
        cov = centered.T @ centered / len(codes)
        evals = np.sort(np.linalg.eigvalsh(cov))[::-1]
        proj, kept = E.pca_project(codes, out_dims=3)
        residual_power = (centered ** 2).sum() / len(codes) - (proj ** 2).sum() / len(codes)
        assert residual_power == pytest.approx(evals[3:].sum(), abs=1e-6)
        np.testing.assert_allclose(kept, evals[:3], atol=1e-9)

    def test_sign_convention_deterministic(self):
        codes = np.random.default_rng(7).normal(size=(50, 4))
        a, _ = E.pca_project(codes)
        b, _ = E.pca_project(codes.copy())
        np.testing.assert_array_equal(a, b)
        # flipping all inputs flips centered data; components re-anchor to
        # their largest entry so projections flip sign consistently
        c, _ = E.pca_project(-codes)
        np.testing.assert_allclose(np.abs(a), np.abs(c), atol=1e-9)

    def test_too_few_rows(self):
        with pytest.raises(DimensionError):
            E.pca_project(np.zeros((3, 5)), out_dims=3)

    def test_csv_output(self, tmp_path):
        rng = np.random.default_rng(8)
        quats = rng.standard_normal((10, 4))
        quats = so3.canonicalize(quats / np.linalg.norm(quats, axis=1, keepdims=True))
        proj = rng.normal(size=(10, 3))
        path = tmp_path / "pca.csv"
        E.write_pca_csv(path, proj, quats)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "index,pc1,pc2,pc3,beta,theta,phi"
        assert len(lines) == 11
        row = lines[3].split(",")
        assert int(row[0]) == 2
        beta, theta, phi = so3.view_from_quat(quats[2])
        assert float(row[4]) == pytest.approx(beta, abs=1e-5)
        assert float(row[5]) == pytest.approx(theta, abs=1e-5)
        assert float(row[6]) == pytest.approx(phi, abs=1e-5)

    def test_csv_shape_mismatch(self, tmp_path):
        with pytest.raises(DimensionError):
            E.write_pca_csv(tmp_path / "x.csv", np.zeros((4, 2)), np.zeros((4, 4)))


class TestClusters:
    def test_separated_clusters_perfect(self):
        rng = np.random.default_rng(9)
        centers = np.eye(3) * 10
        codes = np.concatenate([centers[k] + rng.normal(size=(30, 3)) * 0.1
                                for k in range(3)])
        ids = np.repeat([0, 1, 2], 30)
        rep = E.shape_cluster_report(codes, ids, codes, ids)
        assert rep.accuracy == 1.0
        assert np.trace(rep.confusion) == 90

    def test_identical_centroids_tie_to_lowest(self):
        rows = np.tile([[1.0, 2.0, 0.5]], (10, 1))
        codes = np.concatenate([rows, rows])
        ids = np.repeat([0, 1], 10)
        rep = E.shape_cluster_report(codes, ids, codes, ids)
        assert rep.accuracy == pytest.approx(0.5)
        assert rep.confusion[0, 0] == 10 and rep.confusion[1, 0] == 10

    def test_confusion_rows_sum_to_counts(self):
        rng = np.random.default_rng(10)
        codes = rng.normal(size=(40, 4))
        train_ids = np.repeat([0, 1], 20)
        hold = rng.normal(size=(15, 4))
        hold_ids = np.array([0] * 9 + [1] * 6)
        rep = E.shape_cluster_report(codes, train_ids, hold, hold_ids)
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), [9, 6])

    def test_missing_training_object(self):
        codes = np.random.default_rng(11).normal(size=(10, 3))
        with pytest.raises(ConfigError):
            E.shape_cluster_report(codes, np.zeros(10, int),
                                   codes, np.repeat([0, 2], 5))

    def test_single_object_rejected(self):
        codes = np.random.default_rng(12).normal(size=(10, 3))
        with pytest.raises(ConfigError):
            E.shape_cluster_report(codes, np.zeros(10, int),
                                   codes, np.zeros(10, int))


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("evalds")
    specs = [desk_objects()[0], desk_objects()[3]]     # cylinder + lprism
    views = so3.sample_equidistant_views(0)            # 12 views
    rots = so3.build_reference_rotations(views, 2)
    generate_dataset(specs, rots, desk_camera(), seed=5, out_dir=out,
                     holdout_fraction=0.25)
    return load_dataset(out)


@pytest.fixture(scope="module")
def small_model():
    cfg = ModelConfig(d=8, image_size=32, hsh_dim=16, n_objects=2,
                      mlp_widths=(24, 24, 24))
    return init_params(cfg, seed=11), cfg


class TestPipelines:
    def test_select_holdout(self, small_ds):
        sel = E.select_holdout(small_ds, 5, seed=3)
        assert len(sel) == 5
        assert np.all(np.diff(sel) > 0)
        assert set(sel) <= set(small_ds.holdout_indices.tolist())
        np.testing.assert_array_equal(sel, E.select_holdout(small_ds, 5, seed=3))
        assert not np.array_equal(sel, E.select_holdout(small_ds, 5, seed=4))
        full = E.select_holdout(small_ds, 10_000, seed=3)
        np.testing.assert_array_equal(full, small_ds.holdout_indices)

    def test_conditioned_errors(self, small_ds, small_model):
        params, cfg = small_model
        views = so3.sample_equidistant_views(0)
        rotset = so3.build_reference_rotations(views, 2)
        idx = E.select_holdout(small_ds, 6, seed=0)
        errs, ids = E.conditioned_errors(params, cfg, small_ds, rotset, idx,
                                         max_n=3)
        assert errs.shape == (6,)
        assert np.all((errs >= 0) & (errs <= np.pi + 1e-9))
        np.testing.assert_array_equal(ids, small_ds.object_idx[idx])
        errs2, _ = E.conditioned_errors(params, cfg, small_ds, rotset, idx,
                                        max_n=3)
        np.testing.assert_array_equal(errs, errs2)

    def test_rendered_errors(self, small_ds, small_model):
        params, cfg = small_model
        mesh, _ = make_primitive(desk_objects()[0])
        views = so3.sample_equidistant_views(0)
        rotset = so3.build_reference_rotations(views, 2)
        cb = I.build_codebook_rendered(params, cfg, mesh, rotset, small_ds.camera)
        hold = small_ds.holdout_indices
        mine = hold[small_ds.object_idx[hold] == 0]
        errs = E.rendered_errors(params, cfg, small_ds, cb, 0, mine)
        assert errs.shape == (len(mine),)
        assert np.all(np.isfinite(errs))
        with pytest.raises(ConfigError):
            E.rendered_errors(params, cfg, small_ds, cb, 0, hold)

    def test_shape_space_metrics(self, small_ds, small_model):
        params, cfg = small_model
        rep = E.shape_space_metrics(params, cfg, small_ds)
        hold = small_ds.holdout_indices
        counts = [int((small_ds.object_idx[hold] == k).sum()) for k in range(2)]
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), counts)
        assert 0.0 <= rep.accuracy <= 1.0


class TestReport:
    def make(self):
        errs = np.array([4, 8, 14, 40, 3, 70]) * DEG
        ids = np.array([0, 0, 0, 1, 1, 1])
        return E.build_report(errs, ids, ["cyl", "lprism"],
                              config={"mode": "conditioned"},
                              extra_aggregate={"shape_accuracy": 0.95})

    def test_fields(self):
        rep = self.make()
        assert rep.per_object["cyl"]["n"] == 3
        assert rep.per_object["cyl"]["ap"]["15"] == pytest.approx(1.0)
        assert rep.per_object["lprism"]["ap"]["30"] == pytest.approx(1 / 3)
        assert rep.aggregate["ap"]["30"] == pytest.approx((1.0 + 1 / 3) / 2)
        assert rep.aggregate["shape_accuracy"] == 0.95
        assert rep.aggregate["n"] == 6
        assert rep.warnings == []

    def test_median(self):
        rep = self.make()
        assert rep.per_object["cyl"]["median_err_deg"] == pytest.approx(8.0)

    def test_empty_object_warns(self):
        rep = E.build_report(np.array([0.1]), np.array([0]), ["a", "b"],
                             config={})
        assert any("b" in w for w in rep.warnings)
        assert np.isnan(rep.per_object["b"]["median_err_deg"])

    def test_json_roundtrip(self, tmp_path):
        rep = self.make()
        path = tmp_path / "report.json"
        rep.save(path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"config", "per_object", "aggregate", "warnings",
                            "generated_at"}
        assert doc["per_object"]["cyl"]["n"] == 3

    def test_csv_output(self, tmp_path):
        rep = self.make()
        path = tmp_path / "report.csv"
        rep.save_csv(path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 4                      # header + 2 objects + macro
        assert lines[0].startswith("object,n,median_err_deg,ap5,")
        assert lines[-1].startswith("macro,6,")
