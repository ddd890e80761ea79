import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cluttergrasp.errors import NoScoreError
from cluttergrasp.grasp import (
    GripperSpec,
    PointCloud,
    antipodal,
    collision_free,
    estimate_normals,
    force_closure_score,
    make_candidate,
    sample_candidates,
)

from .oracles import closed_form_score, random_contact_pair


def tilted_pair(deg1, deg2=0.0):
    """Contacts 4 cm apart along x; n1 rotated deg1 away from -x about z."""
    a1, a2 = math.radians(deg1), math.radians(deg2)
    p1 = np.array([0.0, 0.0, 0.0])
    p2 = np.array([0.04, 0.0, 0.0])
    n1 = np.array([-math.cos(a1), math.sin(a1), 0.0])
    n2 = np.array([math.cos(a2), 0.0, math.sin(a2)])
    return p1, n1, p2, n2


def sphere_cloud(radius=0.02, n=2000, center=(0.0, 0.0, 0.0), seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(np.asarray(center) + radius * v), v


class TestAntipodal:
    @pytest.mark.parametrize("mu", [0.01, 0.1, 0.5, 1.0, 3.0])
    def test_perfectly_opposed_any_mu(self, mu):
        assert antipodal(tilted_pair(0.0), mu)

    def test_thirty_degree_threshold(self):
        contacts = tilted_pair(30.0)
        assert not antipodal(contacts, 0.57)
        assert antipodal(contacts, 0.578)
        assert not antipodal(contacts, 0.5)
        assert antipodal(contacts, 0.6)

    @pytest.mark.parametrize("mu", [0.1, 0.5, 0.9, 1.0])
    def test_fifty_degrees_never(self, mu):
        assert not antipodal(tilted_pair(50.0), mu)

    def test_zero_length_line(self):
        p = np.zeros(3)
        with pytest.raises(ValueError):
            antipodal((p, np.array([1.0, 0, 0]), p, np.array([-1.0, 0, 0])), 0.5)

    def test_nonpositive_mu(self):
        with pytest.raises(ValueError):
            antipodal(tilted_pair(0.0), 0.0)


class TestScore:
    def test_opposed_scores_one(self):
        assert force_closure_score(tilted_pair(0.0)) == 1.0

    def test_thirty_degrees_scores_half(self):
        assert force_closure_score(tilted_pair(30.0)) == 0.5

    def test_barely_antipodal_scores_tenth(self):
        # tan(44 deg) = 0.966 -> only mu = 1.0 holds
        assert force_closure_score(tilted_pair(44.0)) == 0.1

    def test_not_antipodal_raises(self):
        with pytest.raises(NoScoreError):
            force_closure_score(tilted_pair(50.0))

    def test_matches_closed_form(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            c = random_contact_pair(rng)
            expected = closed_form_score(*c)
            if expected is None:
                with pytest.raises(NoScoreError):
                    force_closure_score(c)
            else:
                assert force_closure_score(c) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 10.0))
    def test_swap_and_scale_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        p1, n1, p2, n2 = random_contact_pair(rng)
        pivot = rng.uniform(-1, 1, 3)
        scaled = (pivot + scale * (p1 - pivot), n1, pivot + scale * (p2 - pivot), n2)
        swapped = (p2, n2, p1, n1)
        for mu in (0.3, 0.7, 1.0):
            base = antipodal((p1, n1, p2, n2), mu)
            assert antipodal(swapped, mu) == base
            assert antipodal(scaled, mu) == base


class TestNormals:
    def test_plane_faces_camera(self):
        g = np.linspace(-0.05, 0.05, 21)
        xx, yy = np.meshgrid(g, g)
        pts = np.c_[xx.ravel(), yy.ravel(), np.zeros(xx.size)]
        out = estimate_normals(PointCloud(pts), k=16, viewpoint=(0.0, 0.0, 1.0))
        assert np.allclose(out.normals, [0.0, 0.0, 1.0], atol=1e-3)

    def test_sphere_matches_analytic_normal(self):
        n = 4000
        i = np.arange(n) + 0.5
        polar = np.arccos(1 - 2 * i / n)
        azim = math.pi * (1 + 5**0.5) * i
        dirs = np.c_[np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)]
        cloud = PointCloud(0.02 * dirs)
        # a viewpoint at the center orients every normal inward
        out = estimate_normals(cloud, k=16, viewpoint=(0.0, 0.0, 0.0))
        est = -out.normals
        angles = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", est, dirs), -1, 1)))
        assert angles.max() < 2.0

    def test_collinear_unset(self):
        pts = np.array([[0.0, 0, 0], [0.01, 0, 0], [0.02, 0, 0]])
        out = estimate_normals(PointCloud(pts), k=3)
        assert not out.has_normal.any()

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(np.zeros((2, 3))), k=3)

    def test_unit_length(self):
        cloud, _ = sphere_cloud(n=500, seed=3)
        out = estimate_normals(cloud, k=10, viewpoint=(0, 0, 1))
        assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-6)


def outward_sphere(radius=0.02, n=2000, seed=0):
    cloud, dirs = sphere_cloud(radius=radius, n=n, seed=seed)
    cloud.normals = dirs
    return cloud


class TestSampler:
    def test_small_sphere_feasible(self):
        cands = sample_candidates(outward_sphere(0.02), GripperSpec(), m=200, seed=1)
        assert cands
        assert all(0 < c.width <= 0.085 for c in cands)
        assert all(c.score is not None and 0.1 <= c.score <= 1.0 for c in cands)
        for c in cands:
            assert abs(np.dot(c.closing_axis, c.approach_axis)) < 1e-6
            assert antipodal(c.contacts, 1.0)

    def test_wide_box_top_only_empty(self):
        g = np.linspace(-0.1, 0.1, 41)
        xx, yy = np.meshgrid(g, g)
        pts = np.c_[xx.ravel(), yy.ravel(), np.full(xx.size, 0.05)]
        cloud = PointCloud(pts, normals=np.tile([0.0, 0.0, 1.0], (len(pts), 1)))
        assert sample_candidates(cloud, GripperSpec(), m=500, seed=0) == []

    def test_deterministic(self):
        cloud = outward_sphere(0.02, n=800)
        a = sample_candidates(cloud, GripperSpec(), m=100, seed=5)
        b = sample_candidates(cloud, GripperSpec(), m=100, seed=5)
        assert [c.to_dict() for c in a] == [c.to_dict() for c in b]

    def test_no_normals_empty(self):
        assert sample_candidates(PointCloud(np.zeros((5, 3))), GripperSpec()) == []


class TestCollision:
    def candidate(self):
        # contacts on a 4 cm sphere equator, approaching from above
        return make_candidate([-0.02, 0, 0.02], [-1, 0, 0], [0.02, 0, 0.02], [1, 0, 0])

    def test_approach_is_down_for_opposed_pair(self):
        c = self.candidate()
        assert np.allclose(c.approach_axis, [0, 0, -1])

    def test_empty_obstacles(self):
        assert collision_free(PointCloud(np.zeros((0, 3))), self.candidate())

    def test_point_in_finger(self):
        c = self.candidate()
        # finger 1 occupies x in [-0.03, -0.02], z in [0.015, 0.05] (approach is -z)
        hit = PointCloud(np.array([[-0.025, 0.0, 0.03]]))
        assert not collision_free(hit, c)

    def test_point_in_palm(self):
        hit = PointCloud(np.array([[0.0, 0.0, 0.058]]))
        assert not collision_free(hit, self.candidate())

    def test_three_mm_outside_inflated_box(self):
        c = self.candidate()
        g = GripperSpec()
        # finger 1 outer face at x = -0.02 - thickness; inflated by 2 mm; add 3 mm more
        x = -0.02 - g.finger_thickness - 0.002 - 0.003
        assert collision_free(PointCloud(np.array([[x, 0.0, 0.03]])), c)
        # and 1 mm inside the inflation band is a hit
        x_in = -0.02 - g.finger_thickness - 0.001
        assert not collision_free(PointCloud(np.array([[x_in, 0.0, 0.03]])), c)
