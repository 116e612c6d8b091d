"""Rotation machinery tests.

scipy.spatial.transform.Rotation provides the independent oracle for the
Euler composition and matrix conversion.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as R

from poselatent import so3
from poselatent.errors import DimensionError


def random_quats(n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


angles = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


class TestCanonicalize:
    def test_positive_w_untouched(self):
        q = np.array([0.5, 0.5, 0.5, 0.5])
        np.testing.assert_array_equal(so3.canonicalize(q), q)

    def test_negative_w_flipped(self):
        np.testing.assert_allclose(so3.canonicalize([-0.5, 0.5, 0.5, 0.5]),
                                   [0.5, -0.5, -0.5, -0.5])

    def test_zero_w_tie_break(self):
        np.testing.assert_allclose(so3.canonicalize([0.0, -1.0, 0.0, 0.0]), [0.0, 1.0, 0.0, 0.0])
        np.testing.assert_allclose(so3.canonicalize([0.0, 0.0, -0.3, 0.9]),
                                   [0.0, 0.0, 0.3, -0.9])
        np.testing.assert_allclose(so3.canonicalize([0.0, 0.0, 0.0, -1.0]), [0.0, 0.0, 0.0, 1.0])

    def test_batch(self):
        q = np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]])
        out = so3.canonicalize(q)
        assert (out[:, 0] >= 0).all()


class TestQuatFromView:
    def test_identity(self):
        np.testing.assert_allclose(so3.quat_from_view(0, 0, 0), [1, 0, 0, 0], atol=1e-15)

    def test_theta_pi(self):
        np.testing.assert_allclose(so3.quat_from_view(0, np.pi, 0), [0, 0, 1, 0], atol=1e-15)

    def test_beta_pi_equals_phi_pi(self):
        a = so3.quat_from_view(np.pi, 0, 0)
        b = so3.quat_from_view(0, 0, np.pi)
        assert so3.geodesic_distance(a, b) < 1e-12

    @given(angles, st.floats(min_value=0.0, max_value=np.pi), angles)
    @settings(max_examples=60, deadline=None)
    def test_matches_scipy_zyz(self, beta, theta, phi):
        q = so3.quat_from_view(beta, theta, phi)
        assert q[0] >= 0
        ref = R.from_euler("ZYZ", [phi, theta, beta]).as_matrix()
        np.testing.assert_allclose(so3.quat_to_matrix(q), ref, atol=1e-12)

    def test_view_from_quat_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            beta, phi = rng.uniform(0, 2 * np.pi, 2)
            theta = rng.uniform(0.05, np.pi - 0.05)
            q = so3.quat_from_view(beta, theta, phi)
            b2, t2, p2 = so3.view_from_quat(q)
            q2 = so3.quat_from_view(b2, t2, p2)
            # arccos near 1 resolves to ~3e-8 at float64 precision
            assert so3.geodesic_distance(q, q2) < 1e-7

    def test_view_from_quat_pole(self):
        q = so3.quat_from_view(1.0, 0.0, 0.5)   # collapses to Rz(1.5)
        beta, theta, phi = so3.view_from_quat(q)
        assert phi == 0.0 and theta == pytest.approx(0.0, abs=1e-9)
        assert beta == pytest.approx(1.5, abs=1e-9)


class TestGeodesic:
    def test_quarter_turn(self):
        q = so3.quat_about_axis((0, 0, 1), np.pi / 2)
        assert so3.geodesic_distance([1, 0, 0, 0], q) == pytest.approx(np.pi / 2, abs=1e-12)

    def test_antipodal_lift_is_zero(self):
        q = random_quats(1, seed=1)[0]
        assert so3.geodesic_distance(q, -q) == pytest.approx(0.0, abs=1e-7)

    def test_symmetric(self):
        a, b = random_quats(2, seed=2)
        assert so3.geodesic_distance(a, b) == pytest.approx(so3.geodesic_distance(b, a))

    @given(st.integers(min_value=0, max_value=10 ** 9))
    @settings(max_examples=40, deadline=None)
    def test_triangle_inequality(self, seed):
        a, b, c = random_quats(3, seed=seed)
        ab = so3.geodesic_distance(a, b)
        bc = so3.geodesic_distance(b, c)
        ac = so3.geodesic_distance(a, c)
        assert ac <= ab + bc + 1e-9

    def test_range(self):
        q = random_quats(100, seed=4)
        d = so3.geodesic_distance(q[:50], q[50:])
        assert (d >= 0).all() and (d <= np.pi + 1e-12).all()


class TestViews:
    @pytest.mark.parametrize("level,count", [(0, 12), (1, 42), (2, 162), (3, 642)])
    def test_vertex_counts(self, level, count):
        assert so3.icosphere_vertices(level).shape == (count, 3)
        assert so3.sample_equidistant_views(level).shape == (count, 2)

    def test_unit_vectors(self):
        v = so3.icosphere_vertices(2)
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, rtol=1e-12)

    def test_sorted_by_theta_then_phi(self):
        views = so3.sample_equidistant_views(2)
        keys = list(zip(views[:, 0], views[:, 1]))
        assert keys == sorted(keys)

    def test_min_pairwise_angle_positive(self):
        v = so3.icosphere_vertices(1)
        dots = np.clip(v @ v.T, -1, 1)
        np.fill_diagonal(dots, -1)
        assert np.arccos(dots.max()) > 0.1

    def test_deterministic(self):
        a = so3.sample_equidistant_views(2)
        b = so3.sample_equidistant_views(2)
        assert np.array_equal(a, b)


class TestReferenceRotations:
    def test_count_and_provenance(self):
        views = so3.sample_equidistant_views(0)
        rs = so3.build_reference_rotations(views, 4)
        assert len(rs) == 48
        assert rs.provenance == "equidistant"
        assert rs.meta == {"n_views": 12, "n_inplane": 4}

    def test_all_distinct(self):
        rs = so3.build_reference_rotations(so3.sample_equidistant_views(1), 6)
        assert rs.min_pairwise_angle() > 1e-6

    def test_inplane_spacing(self):
        # Consecutive in-plane rotations of one view differ by exactly 2*pi/n.
        rs = so3.build_reference_rotations(np.array([[1.0, 0.5]]), 8)
        for j in range(7):
            d = so3.geodesic_distance(rs.quats[j], rs.quats[j + 1])
            assert d == pytest.approx(2 * np.pi / 8, abs=1e-9)

    def test_view_major_order(self):
        views = so3.sample_equidistant_views(0)
        rs = so3.build_reference_rotations(views, 3)
        q = so3.quat_from_view(2 * (2 * np.pi / 3), views[2, 0], views[2, 1])
        assert so3.geodesic_distance(rs.quats[2 * 3 + 2], q) < 1e-7

    def test_roundtrip_serialization(self, tmp_path):
        rs = so3.build_reference_rotations(so3.sample_equidistant_views(0), 4)
        p = tmp_path / "rots.fta"
        rs.save(p)
        back = so3.RotationSet.load(p)
        assert back.provenance == "equidistant"
        assert back.meta["n_inplane"] == 4
        assert len(back) == len(rs)
        d = so3.geodesic_distance(back.quats, rs.quats)
        assert d.max() < 1e-6    # stored as f32


class TestKMeans:
    def test_two_blobs_with_antipodal_lifts(self):
        rng = np.random.default_rng(5)
        a = so3.quat_about_axis((0, 0, 1), 0.0)
        b = so3.quat_about_axis((1, 0, 0), np.pi / 2)
        pts = []
        for center in (a, b):
            for _ in range(40):
                jitter = so3.quat_about_axis(rng.standard_normal(3), rng.uniform(0, 0.05))
                q = so3.quat_multiply(center, jitter)
                pts.append(q if rng.random() < 0.5 else -q)   # random lift signs
        rs = so3.quat_kmeans(np.array(pts), k=2, seed=0)
        assert len(rs) == 2
        assert rs.provenance == "kmeans"
        d0 = min(so3.geodesic_distance(rs.quats[0], a), so3.geodesic_distance(rs.quats[0], b))
        d1 = min(so3.geodesic_distance(rs.quats[1], a), so3.geodesic_distance(rs.quats[1], b))
        assert d0 < 0.05 and d1 < 0.05
        # the two centroids find the two different blobs
        assert so3.geodesic_distance(rs.quats[0], rs.quats[1]) > 1.0

    def test_k_equals_n(self):
        q = random_quats(6, seed=6)
        rs = so3.quat_kmeans(q, k=6, seed=1)
        # every input is its own cluster (up to lift sign)
        d = np.abs(rs.quats @ q.T).max(axis=1)
        np.testing.assert_allclose(2 * np.arccos(np.minimum(1, d)), 0.0, atol=1e-6)

    def test_deterministic(self):
        q = random_quats(60, seed=7)
        a = so3.quat_kmeans(q, k=5, seed=42)
        b = so3.quat_kmeans(q, k=5, seed=42)
        assert np.array_equal(a.quats, b.quats)

    def test_seed_changes_init(self):
        q = random_quats(200, seed=8)
        a = so3.quat_kmeans(q, k=12, seed=0)
        b = so3.quat_kmeans(q, k=12, seed=99)
        assert not np.array_equal(a.quats, b.quats)

    def test_bad_k(self):
        with pytest.raises(DimensionError):
            so3.quat_kmeans(random_quats(4), k=5, seed=0)


class TestSymmetry:
    def test_trivial_equals_geodesic(self):
        a, b = random_quats(2, seed=9)
        g = so3.SymmetryGroup()
        assert so3.symmetry_aware_error(a, b, g) == pytest.approx(so3.geodesic_distance(a, b))

    def test_continuous_z_forgives_spin(self):
        g = so3.SymmetryGroup(kind="continuous", axis=(0, 0, 1))
        q = so3.quat_from_view(0.3, 1.0, 2.0)
        spun = so3.quat_multiply(q, so3.quat_about_axis((0, 0, 1), 1.2345))
        assert so3.symmetry_aware_error(spun, q, g) < 0.01   # 1-degree grid

    def test_cyclic_four(self):
        g = so3.SymmetryGroup(kind="cyclic", order=4)
        q = so3.quat_from_view(0.5, 0.8, 0.1)
        quarter = so3.quat_multiply(q, so3.quat_about_axis((0, 0, 1), np.pi / 2))
        eighth = so3.quat_multiply(q, so3.quat_about_axis((0, 0, 1), np.pi / 4))
        assert so3.symmetry_aware_error(quarter, q, g) < 1e-9
        assert so3.symmetry_aware_error(eighth, q, g) == pytest.approx(np.pi / 4, abs=1e-9)

    def test_never_exceeds_plain_geodesic(self):
        g = so3.SymmetryGroup(kind="cyclic", order=4)
        est = random_quats(20, seed=10)
        gt = random_quats(20, seed=11)
        errs = so3.symmetry_aware_errors(est, gt, g)
        plain = so3.geodesic_distance(est, gt)
        assert (errs <= plain + 1e-12).all()

    def test_vectorized_matches_scalar(self):
        g = so3.SymmetryGroup(kind="continuous", axis=(0, 0, 1))
        est = random_quats(5, seed=12)
        gt = random_quats(5, seed=13)
        vec = so3.symmetry_aware_errors(est, gt, g)
        ref = [so3.symmetry_aware_error(est[i], gt[i], g) for i in range(5)]
        np.testing.assert_allclose(vec, ref, atol=1e-12)

    def test_group_json_roundtrip(self):
        g = so3.SymmetryGroup(kind="cyclic", axis=(0, 0, 1), order=4)
        back = so3.SymmetryGroup.from_json(g.to_json())
        assert back == g

    def test_invalid(self):
        with pytest.raises(DimensionError):
            so3.SymmetryGroup(kind="mirror")
        with pytest.raises(DimensionError):
            so3.SymmetryGroup(kind="cyclic", order=1)


class TestQuatAlgebra:
    @given(st.integers(min_value=0, max_value=10 ** 9))
    @settings(max_examples=30, deadline=None)
    def test_multiply_matches_scipy(self, seed):
        a, b = random_quats(2, seed=seed)
        ours = so3.quat_multiply(a, b)
        # scipy uses (x,y,z,w) ordering
        ref = (R.from_quat(np.r_[a[1:], a[0]]) * R.from_quat(np.r_[b[1:], b[0]])).as_quat()
        ref = np.r_[ref[3], ref[:3]]
        assert min(np.abs(ours - ref).max(), np.abs(ours + ref).max()) < 1e-12

    def test_rotate_matches_matrix(self):
        q = random_quats(1, seed=20)[0]
        pts = np.random.default_rng(0).standard_normal((7, 3))
        np.testing.assert_allclose(so3.quat_rotate(q, pts), pts @ so3.quat_to_matrix(q).T)

    def test_matrix_is_orthogonal(self):
        m = so3.quat_to_matrix(random_quats(1, seed=21)[0])
        np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0)
