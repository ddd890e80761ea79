import math

import numpy as np
import pytest

from cluttergrasp.errors import NoGraspError, RemoteSelectorUnavailable
from cluttergrasp.grasp import make_candidate
from cluttergrasp.perception import SegmentMask, backproject, render
from cluttergrasp.planner import (
    EpisodeConfig,
    EpisodeResult,
    GridCell,
    StepRecord,
    cell_center,
    cell_of,
    complete_hidden,
    plan_step,
    round_axis,
    run_episode,
    select_grasp,
    target_point_3d,
)
from cluttergrasp.scene import Scene, goal_for_category, goal_from_text, surface_points
from cluttergrasp.selector import ObjectProperty, ScriptedSelector, SelectorResponse

from .conftest import obj
from .oracles import exhaustive_select


def candidate_at(center, score, index=-1):
    c = np.asarray(center, dtype=float)
    d = np.array([0.01, 0.0, 0.0])
    return make_candidate(c - d, np.array([-1.0, 0, 0]), c + d, np.array([1.0, 0, 0]), score=score, index=index)


class TestGrid:
    def test_examples(self):
        assert cell_center((0, 0, 90, 90), 1) == (15, 15)
        assert cell_center((0, 0, 90, 90), 5) == (45, 45)
        assert cell_center((30, 60, 120, 150), 9) == (105, 135)

    def test_cell_of_examples(self):
        assert cell_of((0, 0, 90, 90), (0, 0)) == 1
        assert cell_of((0, 0, 90, 90), (89, 89)) == 9
        assert cell_of((0, 0, 90, 90), (90, 90)) == 9
        # inner boundary belongs to the higher row/column
        assert cell_of((0, 0, 90, 90), (30, 0)) == 2

    def test_inverse(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x1, y1 = rng.uniform(0, 200, 2)
            bbox = (x1, y1, x1 + rng.uniform(1e-3, 100), y1 + rng.uniform(1e-3, 100))
            for i in range(1, 10):
                assert cell_of(bbox, cell_center(bbox, i)) == i

    def test_errors(self):
        with pytest.raises(ValueError):
            cell_center((0, 0, 0, 10), 1)
        with pytest.raises(ValueError):
            cell_center((0, 0, 10, 10), 10)
        with pytest.raises(ValueError):
            cell_of((0, 0, 10, 10), (11, 5))
        assert GridCell(7).row == 2 and GridCell(7).col == 0


class TestTargetPoint:
    def setup_method(self):
        self.scene = Scene((obj(0, "box", "blue", dims=(0.08, 0.08, 0.05)),))
        self.obs = render(self.scene)
        self.pixels = self.obs.pixel_owner == 0

    def test_center_on_object(self):
        mask = SegmentMask.from_pixels(self.pixels, 1.0, "blue box")
        cx, cy = cell_center(mask.bbox, 5)
        u, v = int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5))
        expected = backproject((u, v), self.obs.depth[v, u], self.obs.camera)
        assert np.allclose(target_point_3d(self.obs, mask, 5), expected)

    def test_hole_uses_nearest_pixel(self):
        pix = self.pixels.copy()
        full = SegmentMask.from_pixels(pix, 1.0, "blue box")
        cx, cy = cell_center(full.bbox, 5)
        u0, v0 = int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5))
        pix[v0 - 4:v0 + 5, u0 - 4:u0 + 5] = False
        mask = SegmentMask(pix, full.bbox, 1.0, "blue box")
        vs, us = np.nonzero(pix)
        d2 = (us - cx) ** 2 + (vs - cy) ** 2
        best = min(zip(d2, vs, us))
        expected = backproject((best[2], best[1]), self.obs.depth[best[1], best[2]], self.obs.camera)
        assert np.allclose(target_point_3d(self.obs, mask, 5), expected)

    def test_no_grid_ignores_cell(self):
        mask = SegmentMask.from_pixels(self.pixels, 1.0, "blue box")
        a = target_point_3d(self.obs, mask, 1, no_grid=True)
        b = target_point_3d(self.obs, mask, 9, no_grid=True)
        assert np.array_equal(a, b)
        assert not np.allclose(target_point_3d(self.obs, mask, 1), target_point_3d(self.obs, mask, 9))


class TestSelectGrasp:
    def abc(self):
        t = np.zeros(3)
        return [candidate_at(t + [0.01, 0, 0], 0.3), candidate_at(t + [0.05, 0, 0], 0.9),
                candidate_at(t + [0.5, 0, 0], 1.0)], t

    def test_k2(self):
        cands, t = self.abc()
        assert select_grasp(cands, t, k=2) is cands[1]

    def test_k10(self):
        cands, t = self.abc()
        assert select_grasp(cands, t, k=10) is cands[2]

    def test_single(self):
        c = candidate_at((0.1, 0.1, 0.1), 0.2)
        assert select_grasp([c], (0, 0, 0), 10) is c

    def test_empty(self):
        with pytest.raises(NoGraspError):
            select_grasp([], (0, 0, 0))

    def test_ties_go_to_nearer_then_lower_index(self):
        t = np.zeros(3)
        cands = [candidate_at([0.02, 0, 0], 0.5), candidate_at([0, 0.02, 0], 0.5), candidate_at([0.01, 0, 0], 0.5)]
        assert select_grasp(cands, t, 3) is cands[2]
        cands = cands[:2]
        assert select_grasp(cands, t, 3) is cands[exhaustive_select([c.center for c in cands], [0.5, 0.5], t, 3)]

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 40))
            centers = np.round(rng.uniform(-0.05, 0.05, (n, 3)), 2)
            scores = rng.choice([0.1, 0.5, 0.9, 1.0], n)
            cands = [candidate_at(c, s) for c, s in zip(centers, scores)]
            k = int(rng.choice([1, 5, 10]))
            t = rng.uniform(-0.05, 0.05, 3)
            got = select_grasp(cands, t, k)
            assert got is cands[exhaustive_select(centers, scores, t, k)]


class TestCompletion:
    def test_sphere_axis(self):
        ball = obj(0, "ball", dims=(0.03,), xy=(0.02, -0.01))
        pts = surface_points(ball)
        front = pts[pts[:, 1] < ball.pos[1]]
        assert np.allclose(round_axis(front), ball.pos[:2], atol=1e-4)

    def test_cylinder_axis(self):
        cup = obj(0, "cup", dims=(0.035, 0.09), xy=(-0.03, 0.04))
        pts = surface_points(cup)
        # the camera sees the near side and the lid, never the bottom
        front = pts[((pts[:, 1] < cup.pos[1]) | (pts[:, 2] > cup.top - 1e-6)) & (pts[:, 2] > 1e-6)]
        assert np.allclose(round_axis(front), cup.pos[:2], atol=1e-4)

    def test_box_is_not_round(self):
        box = obj(0, "box", dims=(0.06, 0.05, 0.05))
        assert round_axis(surface_points(box)) is None

    def test_box_walls_close_the_shape(self):
        box = obj(0, "box", dims=(0.06, 0.05, 0.05), yaw=0.4)
        scene = Scene((box,))
        obs = render(scene)
        pts = obs.cloud.points[obs.cloud_owner == 0]
        local = box.to_local(pts)
        normals = np.zeros_like(local)
        # exact outward normals of the visible faces
        ax = np.argmax(np.abs(local) / np.asarray(box.shape.dims), axis=1)
        normals[np.arange(len(local)), ax] = np.sign(local[np.arange(len(local)), ax])
        normals = normals @ box.rotation.T
        hidden, hnorm = complete_hidden(pts, normals)
        assert len(hidden) > 0
        assert np.abs(box.sdf(hidden)).max() < 0.003
        # the synthetic walls cover every side of the box
        faces = {tuple(np.round(n @ box.rotation, 3)) for n in hnorm}
        assert {(1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0)} <= {
            tuple(abs(x) if abs(x) < 1e-9 else x for x in f) for f in faces}


def part_selector(label, box=(0, 0, 224, 224)):
    def select(obs, goal, scene, request, rng=None):
        return SelectorResponse("part", label, box, (ObjectProperty(label, 80, 5),))
    return select


def failing_selector(obs, goal, scene, request, rng=None):
    raise RemoteSelectorUnavailable("stub down")


class TestPlanStep:
    def test_buried_mango_targets_bottle(self, buried_mango):
        action = plan_step(buried_mango, render(buried_mango), goal_from_text("I need a fruit"), ScriptedSelector())
        assert action.target_label == "green bottle"
        assert action.provenance == "object_segmenter"
        assert action.mask.source_id == 1
        assert action.candidate.score >= 0.4

    def test_lone_goal(self, lone_ball):
        action = plan_step(lone_ball, render(lone_ball), goal_for_category("ball"), ScriptedSelector())
        assert action.target_label == "blue ball" and action.mask.source_id == 0

    def test_knife_part_path(self):
        s = Scene((obj(0, "knife", yaw=0.3),))
        action = plan_step(s, render(s), goal_from_text("I want to cut something"), ScriptedSelector())
        assert action.provenance == "part_segmenter"
        local = s.get(0).to_local(action.candidate.center[None])[0]
        assert s.get(0).part("handle").contains_local(local[None], tol=0.01)[0]

    def test_part_falls_back_to_object(self):
        s = Scene((obj(0, "knife", yaw=0.3),))
        action = plan_step(s, render(s), goal_from_text("I want to cut something"), part_selector("red knife blade"))
        assert action.provenance == "object_segmenter_fallback"

    def test_remote_failure_uses_oracle(self, lone_ball):
        action = plan_step(lone_ball, render(lone_ball), goal_for_category("ball"), failing_selector)
        assert action.provenance == "scripted_fallback" and action.target_label == "blue ball"

    def test_unknown_label_uses_oracle(self, lone_ball):
        def wrong(obs, goal, scene, request, rng=None):
            return SelectorResponse("object", "purple unicorn", (0, 0, 224, 224), (ObjectProperty("purple unicorn", 50, 5),))
        action = plan_step(lone_ball, render(lone_ball), goal_for_category("ball"), wrong)
        assert action.provenance == "scripted_fallback"

    def test_deterministic(self, buried_mango):
        goal = goal_from_text("I need a fruit")
        a = plan_step(buried_mango, render(buried_mango), goal, ScriptedSelector(), seed=4)
        b = plan_step(buried_mango, render(buried_mango), goal, ScriptedSelector(), seed=4)
        assert np.array_equal(a.candidate.center, b.candidate.center)


class TestEpisode:
    def test_visible_goal_one_motion(self, lone_ball):
        r = run_episode(lone_ball, goal_for_category("ball"))
        assert r.success and r.motions == 1

    def test_one_occluder_two_motions(self):
        ball = obj(0, "ball", "blue", xy=(0.0, 0.03), dims=(0.03,))
        carton = obj(1, "carton", "red", xy=(0.0, -0.035), dims=(0.05, 0.075, 0.13))
        r = run_episode(Scene((ball, carton)), goal_for_category("ball"))
        assert r.success and r.motions == 2
        assert [t.selected_label for t in r.trace] == ["red carton", "blue ball"]

    def test_unreachable_goal_spends_budget(self):
        big = obj(0, "box", dims=(0.15, 0.15, 0.15))
        r = run_episode(Scene((big,)), goal_for_category("box"), config=EpisodeConfig(max_steps=4))
        assert not r.success and r.motions == 4

    def test_certain_failure(self, lone_ball):
        r = run_episode(lone_ball, goal_for_category("ball"), config=EpisodeConfig(max_steps=3, failure_prob=1.0))
        assert not r.success and r.motions == 3
        assert {t.outcome for t in r.trace} == {"stochastic"}

    def test_reproducible(self, buried_mango):
        goal = goal_from_text("I need a fruit")
        assert run_episode(buried_mango, goal, seed=2).to_dict() == run_episode(buried_mango, goal, seed=2).to_dict()

    def test_result_round_trip(self, buried_mango):
        r = run_episode(buried_mango, goal_from_text("I need a fruit"), seed=1)
        assert EpisodeResult.from_dict(r.to_dict()).to_dict() == r.to_dict()

    def test_result_invariants(self):
        with pytest.raises(ValueError):
            EpisodeResult(True, 0)
        with pytest.raises(ValueError):
            EpisodeResult(False, -1)
        assert StepRecord(0, None, None, None, "skipped").to_dict()["outcome"] == "skipped"


class TestConfig:
    def test_id(self):
        assert EpisodeConfig().config_id == "scripted-max15-full"
        assert EpisodeConfig(ablation={"no_grid", "crop_only"}).config_id == "scripted-max15-crop_only-no_grid"
        assert EpisodeConfig(name="mine").config_id == "mine"

    def test_round_trip(self):
        c = EpisodeConfig(max_steps=50, selector_kind="random_occluder", ablation={"no_grid"}, tau=0.5)
        assert EpisodeConfig.from_dict(c.to_dict()).to_dict() == c.to_dict()

    def test_bad_values(self):
        with pytest.raises(ValueError):
            EpisodeConfig(max_steps=0)
        with pytest.raises(ValueError):
            EpisodeConfig(ablation={"no_brain"})
