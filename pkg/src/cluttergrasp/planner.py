"""One planning step and the closed observe-select-grasp loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyCropError,
    InvalidCandidateError,
    NoGraspError,
    RemoteSelectorUnavailable,
    SelectionError,
    StepSkipped,
)
from .grasp import (
    CLEARANCE,
    GraspCandidate,
    GripperSpec,
    PointCloud,
    closing_region_mask,
    collision_free,
    estimate_normals,
    gripper_boxes,
    gripper_corners,
    sample_candidates,
)
from .perception import (
    Observation,
    SegmentationNoise,
    SegmentMask,
    _backproject_many,
    crop_cloud,
    parse_query,
    render,
    segment_by_text,
)
from .scene import GoalSpec, GraspNoise, Scene, execute_grasp, goal_satisfied
from .selector import (
    RetryPolicy,
    ScriptedParams,
    SelectorRequest,
    SelectorResponse,
    goal_only_select,
    make_selector,
    scripted_select,
)

ABLATIONS = ("no_grid", "crop_only", "no_selector")
PROVENANCES = ("part_segmenter", "object_segmenter", "object_segmenter_fallback", "scripted_fallback")
TOP_SURFACE_BAND = 0.003
TABLE_BAND = 0.002
FAILED_RADIUS = 0.01
SHADOW_MARGIN = 0.005


# --------------------------------------------------------------------------
# 3x3 grid


@dataclass(frozen=True)
class GridCell:
    index: int

    def __post_init__(self):
        if not 1 <= int(self.index) <= 9:
            raise ValueError(f"grid cell {self.index} outside 1..9")

    @property
    def row(self) -> int:
        return (self.index - 1) // 3

    @property
    def col(self) -> int:
        return (self.index - 1) % 3


def _cell_index(cell) -> int:
    return GridCell(int(cell.index if isinstance(cell, GridCell) else cell)).index


def _check_bbox(bbox):
    x1, y1, x2, y2 = bbox
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"degenerate bbox {tuple(bbox)}")
    return x1, y1, x2, y2


def cell_center(bbox, cell) -> tuple[float, float]:
    x1, y1, x2, y2 = _check_bbox(bbox)
    i = _cell_index(cell)
    w, h = (x2 - x1) / 3, (y2 - y1) / 3
    col, row = (i - 1) % 3, (i - 1) // 3
    return x1 + (col + 0.5) * w, y1 + (row + 0.5) * h


def cell_of(bbox, pixel) -> int:
    """Cell containing ``pixel``; a pixel on an inner boundary goes to the cell right of or below it."""
    x1, y1, x2, y2 = _check_bbox(bbox)
    x, y = pixel
    if not (x1 <= x <= x2 and y1 <= y <= y2):
        raise ValueError(f"pixel {tuple(pixel)} outside bbox {tuple(bbox)}")
    w, h = (x2 - x1) / 3, (y2 - y1) / 3
    col = min(2, max(0, math.floor((x - x1) / w)))
    row = min(2, max(0, math.floor((y - y1) / h)))
    return 3 * row + col + 1


def bbox_center(bbox) -> tuple[float, float]:
    x1, y1, x2, y2 = _check_bbox(bbox)
    return (x1 + x2) / 2, (y1 + y2) / 2


def target_point_3d(obs: Observation, mask: SegmentMask, cell, no_grid: bool = False) -> np.ndarray:
    """Back-project the cell centre, or the nearest mask pixel with depth when the centre is off the mask."""
    pix = mask.pixels & (obs.depth > 0)
    if not pix.any():
        raise ValueError("mask has no pixels with depth")
    cx, cy = bbox_center(mask.bbox) if no_grid else cell_center(mask.bbox, cell)
    # pixel centres sit at integer coordinates
    u, v = int(math.floor(cx + 0.5)), int(math.floor(cy + 0.5))
    if 0 <= v < pix.shape[0] and 0 <= u < pix.shape[1] and pix[v, u]:
        return _backproject_many(np.array([u]), np.array([v]), obs.depth[v, u:u + 1], obs.camera)[0]
    vs, us = np.nonzero(pix)  # row-major order, so argmin breaks ties by smaller index
    d2 = (us - cx) ** 2 + (vs - cy) ** 2
    k = int(np.argmin(d2))
    return _backproject_many(us[k:k + 1], vs[k:k + 1], obs.depth[vs[k], us[k]:us[k] + 1], obs.camera)[0]


def select_grasp(candidates: Sequence[GraspCandidate], target, k: int = 10) -> GraspCandidate:
    """Among the ``k`` candidates nearest ``target`` return the best scored one."""
    if not candidates:
        raise NoGraspError("no grasp candidates")
    if k < 1:
        raise ValueError("k must be >= 1")
    target = tuple(float(t) for t in target)
    items = []
    for i, c in enumerate(candidates):
        if c.score is None:
            raise ValueError(f"candidate {i} has no score")
        items.append((math.dist(tuple(float(x) for x in c.center), target), i, c.score))
    items.sort(key=lambda t: (t[0], t[1]))
    best = min(items[:k], key=lambda t: (-t[2], t[0], t[1]))
    return candidates[best[1]]


# --------------------------------------------------------------------------
# configuration and actions


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 15
    top_k: int = 10
    selector_kind: str = "scripted"
    ablation: frozenset = frozenset()
    endpoint: Optional[str] = None
    timeout_s: float = 30.0
    max_retries: int = 2
    failure_prob: float = 0.0
    tau: float = 0.4
    v_min: float = 0.15
    n_samples: int = 500
    seg_noise: SegmentationNoise = SegmentationNoise()
    name: Optional[str] = None

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        unknown = self.ablation - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}")

    @property
    def config_id(self) -> str:
        if self.name:
            return self.name
        parts = [self.selector_kind, f"max{self.max_steps}"]
        parts += sorted(self.ablation) or ["full"]
        return "-".join(parts)

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "max_steps": self.max_steps,
            "top_k": self.top_k,
            "selector_kind": self.selector_kind,
            "ablation": sorted(self.ablation),
            "failure_prob": self.failure_prob,
            "tau": self.tau,
            "v_min": self.v_min,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeConfig":
        keys = ("max_steps", "top_k", "selector_kind", "endpoint", "timeout_s", "max_retries",
                "failure_prob", "tau", "v_min", "n_samples")
        kwargs = {k: d[k] for k in keys if k in d}
        if "ablation" in d:
            ab = d["ablation"]
            kwargs["ablation"] = frozenset([ab] if isinstance(ab, str) else ab)
        if "name" in d or "config_id" in d:
            kwargs["name"] = d.get("name", d.get("config_id"))
        return cls(**kwargs)


@dataclass
class PlannedAction:
    target_label: str
    mask: SegmentMask
    target_point: np.ndarray
    candidate: GraspCandidate
    provenance: str
    response: Optional[SelectorResponse] = None
    n_candidates: int = 0

    def __post_init__(self):
        if self.candidate.score is None:
            raise ValueError("planned candidate must be scored")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class StepRecord:
    step: int
    selected_label: Optional[str]
    provenance: Optional[str]
    score: Optional[float]
    outcome: str
    grasped_id: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "selected_label": self.selected_label,
            "provenance": self.provenance,
            "score": self.score,
            "outcome": self.outcome,
        }


@dataclass
class EpisodeResult:
    success: bool
    motions: int
    trace: list = field(default_factory=list)
    seed: int = 0
    config_id: str = ""

    def __post_init__(self):
        if self.motions < 0:
            raise ValueError("motions must be >= 0")
        if self.success and self.motions < 1:
            raise ValueError("a successful episode needs at least one motion")

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "motions": self.motions,
            "trace": [r.to_dict() if isinstance(r, StepRecord) else dict(r) for r in self.trace],
            "seed": self.seed,
            "config_id": self.config_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        trace = [StepRecord(**{k: r.get(k) for k in ("step", "selected_label", "provenance", "score", "outcome")})
                 for r in d.get("trace", [])]
        return cls(bool(d["success"]), int(d["motions"]), trace, int(d.get("seed", 0)), str(d.get("config_id", "")))


# --------------------------------------------------------------------------
# one step


def _object_query(label: str) -> str:
    color, category, _ = parse_query(label)
    return f"{color} {category}" if color else category


def _segment(obs, scene, resp: SelectorResponse, noise) -> tuple[list[SegmentMask], Optional[str]]:
    if resp.kind == "part":
        masks = segment_by_text(obs, scene, resp.selected, noise)
        if masks:
            return masks, "part_segmenter"
        masks = segment_by_text(obs, scene, _object_query(resp.selected), noise)
        return masks, "object_segmenter_fallback" if masks else None
    masks = segment_by_text(obs, scene, resp.selected, noise)
    return masks, "object_segmenter" if masks else None


def _box_mask(box, shape) -> np.ndarray:
    H, W = shape
    x1, y1, x2, y2 = (int(round(c)) for c in box)
    m = np.zeros(shape, dtype=bool)
    m[max(0, y1):min(H, y2), max(0, x1):min(W, x2)] = True
    return m


def crop_region(mask: SegmentMask, resp: SelectorResponse, shape, crop_only: bool = False) -> np.ndarray:
    box = _box_mask(resp.crop_box, shape)
    if crop_only:
        return box
    return box | _box_mask(mask.bbox, shape)


def _algebraic_fit(x: np.ndarray, max_radius: float = 0.1):
    """Kasa fit of |x - c|^2 = r^2; returns (center, rms radial residual)."""
    A = np.c_[2 * x, np.ones(len(x))]
    b = np.sum(x**2, axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    c = sol[:-1]
    r2 = sol[-1] + c @ c
    if r2 <= 0 or r2 > max_radius**2:
        return None, math.inf
    resid = np.linalg.norm(x - c, axis=1) - math.sqrt(r2)
    return c, float(np.sqrt(np.mean(resid**2)))


def round_axis(points: np.ndarray, top_band: float = TOP_SURFACE_BAND, fit_tol: float = 0.0005):
    """xy of the axis of a sphere or upright cylinder fitting the points, else None."""
    fits = []
    if len(points) >= 10:
        c, rms = _algebraic_fit(points)
        if c is not None:
            fits.append((rms, c[:2]))
    side = points[points[:, 2] < points[:, 2].max() - top_band]
    if len(side) >= 10:
        c, rms = _algebraic_fit(side[:, :2])
        if c is not None:
            fits.append((rms, c))
    if not fits:
        return None
    rms, c = min(fits, key=lambda t: t[0])
    return c if rms < fit_tol else None


@dataclass
class TopRectangle:
    origin: np.ndarray
    axes: np.ndarray  # rows are the two horizontal edge directions
    lo: np.ndarray
    hi: np.ndarray
    z_bottom: float
    z_top: float

    @property
    def center(self) -> np.ndarray:
        return self.origin + (self.lo + self.hi) / 2 @ self.axes


def fit_top_rectangle(points: np.ndarray, normals: np.ndarray, top_band: float = TOP_SURFACE_BAND) -> TopRectangle:
    """Oriented rectangle around the points' xy, aligned with visible vertical walls when there are any."""
    z_top = points[:, 2].max()
    top_sel = points[:, 2] >= z_top - top_band
    origin = points[top_sel, :2].mean(axis=0)
    wall = ~top_sel & (np.abs(normals[:, 2]) < 0.2)
    if wall.sum() >= 5:
        # wall directions are defined modulo 90 degrees
        ang = np.arctan2(normals[wall, 1], normals[wall, 0])
        a = np.angle(np.mean(np.exp(4j * ang))) / 4
        axes = np.array([[math.cos(a), math.sin(a)], [-math.sin(a), math.cos(a)]])
    else:
        _, _, axes = np.linalg.svd(points[top_sel, :2] - origin, full_matrices=False)
    proj = (points[:, :2] - origin) @ axes.T
    return TopRectangle(origin, axes, proj.min(axis=0), proj.max(axis=0), float(points[:, 2].min()), float(z_top))


def rectangle_walls(rect: TopRectangle, spacing: float = 0.003, keep_out: Optional[np.ndarray] = None):
    """Points and outward normals on the four vertical walls of a fitted rectangle.

    A wall whose top edge runs mostly within 4 mm of ``keep_out`` points is left out;
    that is how the cut between an object part and the rest of the object
    is told apart from a real surface.
    """
    height = rect.z_top - rect.z_bottom
    zs = rect.z_bottom + (np.arange(max(1, round(height / spacing))) + 0.5) * height / max(1, round(height / spacing))
    tree = None
    if keep_out is not None and len(keep_out):
        from scipy.spatial import cKDTree

        tree = cKDTree(keep_out)
    pts, nrm = [], []
    for k in range(2):
        other = 1 - k
        n_t = max(1, round((rect.hi[other] - rect.lo[other]) / spacing))
        ts = rect.lo[other] + (np.arange(n_t) + 0.5) * (rect.hi[other] - rect.lo[other]) / n_t
        for side, val in ((-1.0, rect.lo[k]), (1.0, rect.hi[k])):
            q = np.zeros((len(ts), 2))
            q[:, k] = val
            q[:, other] = ts
            xy = rect.origin + q @ rect.axes
            if tree is not None:
                rim = np.c_[xy, np.full(len(xy), rect.z_top)]
                if np.isfinite(tree.query(rim, distance_upper_bound=0.004)[0]).mean() > 0.5:
                    continue
            n = side * rect.axes[k]
            grid = np.c_[np.repeat(xy, len(zs), axis=0), np.tile(zs, len(xy))]
            pts.append(grid)
            nrm.append(np.tile([n[0], n[1], 0.0], (len(grid), 1)))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.vstack(pts), np.vstack(nrm)


def mirror_about(points: np.ndarray, normals: np.ndarray, center_xy) -> tuple[np.ndarray, np.ndarray]:
    """180 degree turn about the vertical axis through ``center_xy``."""
    mirrored = points.copy()
    mirrored[:, :2] = 2 * np.asarray(center_xy) - points[:, :2]
    mnormals = normals.copy()
    mnormals[:, :2] = -normals[:, :2]
    return mirrored, mnormals


def complete_hidden(points: np.ndarray, normals: np.ndarray, keep_out: Optional[np.ndarray] = None):
    """Synthetic points and normals for the unseen side of a single object.

    Spheres and upright cylinders are mirrored about their fitted axis.
    Flat-topped objects get the walls of a fitted rectangle.  Anything else
    is mirrored about the middle of its top surface.
    """
    axis = round_axis(points)
    if axis is not None:
        return mirror_about(points, normals, axis)
    top_sel = points[:, 2] >= points[:, 2].max() - TOP_SURFACE_BAND
    rect = fit_top_rectangle(points, normals)
    if np.nanmedian(np.abs(normals[top_sel, 2])) > 0.95 and rect.z_top - rect.z_bottom > TOP_SURFACE_BAND:
        return rectangle_walls(rect, keep_out=keep_out)
    top = points[top_sel, :2]
    mean = top.mean(axis=0)
    _, _, vt = np.linalg.svd(top - mean, full_matrices=False)
    proj = (top - mean) @ vt.T
    return mirror_about(points, normals, mean + (proj.max(axis=0) + proj.min(axis=0)) / 2 @ vt)


def _box_samples(box: np.ndarray, spacing: float = 0.004) -> np.ndarray:
    axes = [np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / spacing)) + 1)) for lo, hi in zip(box[0], box[1])]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def in_unseen_space(candidate: GraspCandidate, obs: Observation, target_pixels: np.ndarray,
                    gripper: GripperSpec = GripperSpec(), margin: float = SHADOW_MARGIN) -> bool:
    """True when part of the gripper would sweep space hidden behind a non-target surface.

    Such space may hold the unseen side of a neighbour, so the grasp is
    treated as unsafe.  Space behind the target itself is allowed because
    the target's hidden side has been completed.
    """
    boxes = gripper_boxes(candidate, gripper)
    local = np.vstack([_box_samples(boxes[k]) for k in ("finger1", "finger2", "palm", "closing")])
    basis = np.stack([candidate.closing_axis, candidate.approach_axis, candidate.binormal])
    world = candidate.center + local @ basis
    u, v, z = obs.camera.project(world)
    H, W = obs.shape
    ui, vi = np.floor(u + 0.5).astype(int), np.floor(v + 0.5).astype(int)
    inside = (z > 0) & (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H)
    ui, vi, z = ui[inside], vi[inside], z[inside]
    d = obs.depth[vi, ui]
    hidden = (d > 0) & (z > d + margin) & ~target_pixels[vi, ui]
    return bool(hidden.any())


def _ablated_selector_response(obs, goal, scene, selector, request, config, rng):
    """Query the configured selector; returns (response, used_fallback)."""
    if "no_selector" in config.ablation:
        return goal_only_select(obs, goal, scene), False
    try:
        return selector(obs, goal, scene, request, rng), False
    except RemoteSelectorUnavailable:
        return scripted_select(obs, goal, scene, ScriptedParams(config.v_min)), True


def plan_step(
    scene: Scene,
    obs: Observation,
    goal: GoalSpec,
    selector,
    config: EpisodeConfig = EpisodeConfig(),
    step: int = 0,
    seed: int = 0,
    history: Optional[list] = None,
    avoid: Sequence[np.ndarray] = (),
    gripper: GripperSpec = GripperSpec(),
) -> PlannedAction:
    rng = np.random.default_rng([seed, step, 1])
    request = SelectorRequest(obs.rgb, goal.instruction, step, list(history or []))
    try:
        resp, fell_back = _ablated_selector_response(obs, goal, scene, selector, request, config, rng)
    except SelectionError as e:
        raise StepSkipped(str(e)) from e

    masks, provenance = _segment(obs, scene, resp, config.seg_noise)
    if not masks and not fell_back and "no_selector" not in config.ablation:
        # selector named something the segmenter cannot find: use the oracle instead
        try:
            resp = scripted_select(obs, goal, scene, ScriptedParams(config.v_min))
        except SelectionError as e:
            raise StepSkipped(str(e)) from e
        masks, provenance = _segment(obs, scene, resp, config.seg_noise)
        fell_back = True
    if not masks:
        raise StepSkipped(f"no segment for {resp.selected!r}")
    if fell_back:
        provenance = "scripted_fallback"
    mask = masks[0]

    region = crop_region(mask, resp, obs.shape, crop_only="crop_only" in config.ablation)
    try:
        crop = crop_cloud(obs, region)
    except EmptyCropError as e:
        raise StepSkipped(str(e)) from e
    table_z = scene.workspace.table_z
    crop = crop.subset(crop.points[:, 2] > table_z + TABLE_BAND)
    if len(crop) < 16:
        raise StepSkipped("too few object points in the crop")
    crop = estimate_normals(crop, k=16, viewpoint=obs.camera.position)

    sp = crop.source_pixels
    in_target = mask.pixels[sp[:, 1], sp[:, 0]]
    sel = in_target & crop.has_normal
    if sel.sum() < 3:
        raise StepSkipped("target has too few points with normals")
    keep_out = None
    if provenance == "part_segmenter":
        whole = segment_by_text(obs, scene, _object_query(resp.selected), config.seg_noise)
        if whole:
            rest = whole[0].pixels & ~mask.pixels
            keep_out = crop.points[rest[sp[:, 1], sp[:, 0]]]
    hidden_pts, hidden_nrm = complete_hidden(crop.points[sel], crop.normals[sel], keep_out)
    synthetic = PointCloud(hidden_pts, normals=hidden_nrm)
    cloud = PointCloud.concat([crop, synthetic])
    seed_mask = np.concatenate([in_target, np.ones(len(synthetic), dtype=bool)])
    candidates = sample_candidates(cloud, gripper, m=config.n_samples, seed=int(rng.integers(2**31)), seed_mask=seed_mask)

    target = target_point_3d(obs, mask, resp.preferred_location, no_grid="no_grid" in config.ablation)
    safe = _SafetyCheck(obs, mask, table_z, gripper)
    # the k nearest survivors are the first k to pass in distance order
    order = sorted(range(len(candidates)), key=lambda i: (math.dist(candidates[i].center, target), i))
    kept = []
    for i in order:
        c = candidates[i]
        if any(np.linalg.norm(c.center - a) < FAILED_RADIUS for a in avoid):
            continue
        if safe(c):
            kept.append(c)
            if len(kept) == config.top_k:
                break
    if not kept:
        raise StepSkipped(f"no collision-free grasp on {resp.selected!r}")
    chosen = select_grasp(kept, target, config.top_k)
    return PlannedAction(resp.selected, mask, target, chosen, provenance, resp, len(kept))


class _SafetyCheck:
    """Collision screening of a candidate against everything observed except the target."""

    def __init__(self, obs: Observation, mask: SegmentMask, table_z: float, gripper: GripperSpec):
        from scipy.spatial import cKDTree

        sp = obs.cloud.source_pixels
        self.obstacles = obs.cloud.points[~mask.pixels[sp[:, 1], sp[:, 0]]]
        self.off_table = self.obstacles[:, 2] > table_z + TABLE_BAND
        self.tree = cKDTree(self.obstacles) if len(self.obstacles) else None
        self.obs, self.mask, self.table_z, self.gripper = obs, mask, table_z, gripper
        g = gripper
        self.reach = math.hypot(g.max_opening / 2 + g.finger_thickness, g.finger_depth + g.finger_thickness) + 2 * CLEARANCE

    def __call__(self, c: GraspCandidate) -> bool:
        g = self.gripper
        if gripper_corners(c, g).min(axis=0)[2] < self.table_z:
            return False
        if self.tree is not None:
            near = np.asarray(self.tree.query_ball_point(c.center, self.reach + g.finger_thickness), dtype=np.int64)
            if len(near):
                if not collision_free(PointCloud(self.obstacles[near]), c, g):
                    return False
                objects = self.obstacles[near[self.off_table[near]]]
                if len(objects) and closing_region_mask(objects, c, g, inflate=CLEARANCE).any():
                    return False
        return not in_unseen_space(c, self.obs, self.mask.pixels, g)


# --------------------------------------------------------------------------
# closed loop


def build_selector(config: EpisodeConfig):
    return make_selector(config.selector_kind, config.endpoint, RetryPolicy(config.timeout_s, config.max_retries))


def run_episode(scene: Scene, goal: GoalSpec, selector=None, config: EpisodeConfig = EpisodeConfig(),
                seed: int = 0, gripper: GripperSpec = GripperSpec()) -> EpisodeResult:
    """Observe, plan and grasp until the goal is held or the motion budget is spent."""
    if selector is None:
        selector = build_selector(config)
    trace: list[StepRecord] = []
    history: list = []
    failed_centers: list[np.ndarray] = []
    success = False
    for step in range(config.max_steps):
        obs = render(scene)
        try:
            action = plan_step(scene, obs, goal, selector, config, step, seed, history, failed_centers, gripper)
        except (StepSkipped, NoGraspError):
            trace.append(StepRecord(step, None, None, None, "skipped"))
            history.append((None, "skipped"))
            continue
        noise = GraspNoise(config.failure_prob, seed=int(np.random.default_rng([seed, step, 2]).integers(2**31)))
        try:
            outcome = execute_grasp(scene, action.candidate, noise, gripper, config.tau)
        except InvalidCandidateError:
            outcome = None
        score = float(action.candidate.score)
        if outcome is None or not outcome.success:
            reason = "invalid_candidate" if outcome is None else outcome.failure_reason.value
            trace.append(StepRecord(step, action.target_label, action.provenance, score, reason))
            history.append((action.target_label, reason))
            failed_centers.append(action.candidate.center.copy())
            continue
        trace.append(StepRecord(step, action.target_label, action.provenance, score, "success", outcome.grasped_id))
        history.append((action.target_label, "success"))
        if goal_satisfied(outcome, goal, scene):
            success = True
            scene = outcome.scene_after
            break
        scene = outcome.scene_after
        failed_centers = []
    return EpisodeResult(success, len(trace), trace, int(seed), config.config_id)
