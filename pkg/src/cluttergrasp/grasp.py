"""Two-finger grasp geometry on point clouds.

Normal estimation by local PCA, antipodal contact-pair sampling, the
friction-coefficient sweep quality score and box-based gripper collision
checks.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoScoreError

# descending sweep 1.0, 0.9, ..., 0.1 kept as integer tenths to avoid drift
MU_TENTHS = tuple(range(10, 0, -1))
MU_GRID = tuple(k / 10 for k in MU_TENTHS)

CLEARANCE = 0.002
FINGERTIP_OVERHANG = 0.005
OPPOSING_ANGLE_DEG = 60.0
MIN_CONTACT_WIDTH = 0.002
APPROACH_MIN_NORM = 0.25
# absorbs acos/atan rounding so a line exactly on the cone boundary counts as inside
ANGLE_TOL = 1e-12


@dataclass
class PointCloud:
    """World-frame points with optional per-point attributes.

    ``normals`` rows are NaN where estimation failed.  ``source_pixels`` holds
    ``(u, v)`` for back-projected points and ``(-1, -1)`` for synthetic ones.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    source_pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.zeros((n, 3), dtype=np.uint8)
        else:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if self.source_pixels is None:
            self.source_pixels = np.full((n, 2), -1, dtype=np.int64)
        else:
            self.source_pixels = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
        for name in ("normals", "colors", "source_pixels"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normal(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            points=self.points[index],
            normals=None if self.normals is None else self.normals[index],
            colors=self.colors[index],
            source_pixels=self.source_pixels[index],
        )

    @staticmethod
    def concat(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        with_normals = all(c.normals is not None for c in clouds)
        return PointCloud(
            points=np.concatenate([c.points for c in clouds]),
            normals=np.concatenate([c.normals for c in clouds]) if with_normals else None,
            colors=np.concatenate([c.colors for c in clouds]),
            source_pixels=np.concatenate([c.source_pixels for c in clouds]),
        )


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 0.085
    finger_depth: float = 0.04
    finger_thickness: float = 0.01

    def __post_init__(self):
        if min(self.max_opening, self.finger_depth, self.finger_thickness) <= 0:
            raise ValueError("gripper dimensions must be positive")
        if self.max_opening <= self.finger_thickness:
            raise ValueError("max_opening must exceed finger_thickness")


@dataclass(frozen=True)
class Contacts:
    p1: np.ndarray
    n1: np.ndarray
    p2: np.ndarray
    n2: np.ndarray

    def swapped(self) -> "Contacts":
        return Contacts(self.p2, self.n2, self.p1, self.n1)

    def as_tuple(self):
        return self.p1, self.n1, self.p2, self.n2


@dataclass
class GraspCandidate:
    center: np.ndarray
    closing_axis: np.ndarray
    approach_axis: np.ndarray
    width: float
    contacts: Contacts
    score: Optional[float] = None
    index: int = field(default=-1, compare=False)

    @property
    def binormal(self) -> np.ndarray:
        return np.cross(self.closing_axis, self.approach_axis)

    def to_dict(self) -> dict:
        c = self.contacts
        return {
            "center": self.center.tolist(),
            "closing_axis": self.closing_axis.tolist(),
            "approach_axis": self.approach_axis.tolist(),
            "width": float(self.width),
            "contacts": {
                "p1": c.p1.tolist(), "n1": c.n1.tolist(),
                "p2": c.p2.tolist(), "n2": c.n2.tolist(),
            },
            "score": self.score,
        }


def _as_contacts(contacts) -> Contacts:
    if isinstance(contacts, Contacts):
        return contacts
    p1, n1, p2, n2 = (np.asarray(x, dtype=np.float64) for x in contacts)
    return Contacts(p1, n1, p2, n2)


def misalignment_angles(contacts) -> tuple[float, float]:
    """Angles between the contact line and each finger's pushing direction.

    Fingers push against the outward normal, so finger 1 pushes along
    ``-n1`` and should point along ``u = (p2 - p1)/|p2 - p1|``; finger 2
    pushes along ``-n2`` and should point along ``-u``.
    """
    c = _as_contacts(contacts)
    line = c.p2 - c.p1
    length = float(np.linalg.norm(line))
    if length == 0.0:
        raise ValueError("zero-length contact line")
    u = line / length
    cos1 = float(np.clip(np.dot(u, -c.n1), -1.0, 1.0))
    cos2 = float(np.clip(np.dot(-u, -c.n2), -1.0, 1.0))
    return math.acos(cos1), math.acos(cos2)


def antipodal(contacts, mu: float) -> bool:
    """True when the contact line lies inside both friction cones of half-angle atan(mu)."""
    if mu <= 0:
        raise ValueError("friction coefficient must be positive")
    theta1, theta2 = misalignment_angles(contacts)
    half_angle = math.atan(mu) + ANGLE_TOL
    return theta1 <= half_angle and theta2 <= half_angle


def force_closure_score(contacts) -> float:
    """Sweep mu from 1.0 down to 0.1 and return ``1.1 - mu_min``.

    ``mu_min`` is the last coefficient in the descending sweep for which the
    pair is still antipodal.  Raises :class:`NoScoreError` when the pair is not
    antipodal even at mu = 1.0.
    """
    c = _as_contacts(contacts)
    last_ok = None
    for tenths in MU_TENTHS:
        if not antipodal(c, tenths / 10):
            break
        last_ok = tenths
    if last_ok is None:
        raise NoScoreError("contact pair is not antipodal at mu = 1.0")
    return (11 - last_ok) / 10


def estimate_normals(cloud: PointCloud, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point PCA normals over the ``k`` nearest neighbours.

    Normals are flipped to face ``viewpoint`` (the camera origin).  Points
    whose neighbourhood has rank < 2 get a NaN normal.
    """
    n = len(cloud)
    if k < 3 or n < k:
        raise ValueError(f"need at least k >= 3 points, got k={k}, n={n}")
    pts = cloud.points
    _, idx = cKDTree(pts).query(pts, k=k)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = (evals[:, 1] <= 1e-10 * scale) | (evals[:, 2] <= 1e-20)
    to_view = np.asarray(viewpoint, dtype=np.float64) - pts
    flip = np.einsum("ij,ij->i", normals, to_view) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = np.nan
    return replace(cloud, normals=normals)


def approach_for(p1, n1, p2, n2) -> np.ndarray:
    """Approach direction (palm toward object), orthogonal to the closing axis."""
    u = p2 - p1
    u = u / np.linalg.norm(u)
    mean_n = 0.5 * (n1 + n2)
    ortho = mean_n - np.dot(mean_n, u) * u
    norm = np.linalg.norm(ortho)
    if norm >= APPROACH_MIN_NORM:
        return -ortho / norm
    for fallback in ((0.0, 0.0, -1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)):
        f = np.asarray(fallback)
        ortho = f - np.dot(f, u) * u
        norm = np.linalg.norm(ortho)
        if norm > 1e-3:
            return ortho / norm
    raise AssertionError("unreachable: no orthogonal fallback axis")


def make_candidate(p1, n1, p2, n2, score: Optional[float] = None, index: int = -1) -> GraspCandidate:
    p1, n1, p2, n2 = (np.asarray(x, dtype=np.float64) for x in (p1, n1, p2, n2))
    line = p2 - p1
    width = float(np.linalg.norm(line))
    closing = line / width
    approach = approach_for(p1, n1, p2, n2)
    # re-orthogonalise against rounding
    approach = approach - np.dot(approach, closing) * closing
    approach /= np.linalg.norm(approach)
    return GraspCandidate(
        center=0.5 * (p1 + p2),
        closing_axis=closing,
        approach_axis=approach,
        width=width,
        contacts=Contacts(p1, n1, p2, n2),
        score=score,
        index=index,
    )


def sample_candidates(
    cloud: PointCloud,
    gripper: GripperSpec = GripperSpec(),
    m: int = 500,
    seed: int = 0,
    seed_mask: Optional[np.ndarray] = None,
) -> list[GraspCandidate]:
    """Antipodal contact-pair sampler.

    Draws up to ``m`` seed points; each is paired with the neighbour within
    ``max_opening`` whose normal opposes it within 60 degrees and whose pair
    needs the least friction.  Only pairs antipodal at mu = 1 are kept, and
    each kept candidate carries its sweep score.  ``seed_mask`` optionally
    restricts which points may act as the first contact.
    """
    valid = np.flatnonzero(cloud.has_normal)
    if len(valid) < 2:
        return []
    pts = cloud.points[valid]
    nrm = cloud.normals[valid]
    rng = np.random.default_rng(seed)
    pool = np.arange(len(valid))
    if seed_mask is not None:
        pool = pool[np.asarray(seed_mask, dtype=bool)[valid]]
    if len(pool) == 0:
        return []
    seeds = rng.permutation(pool)[:m]
    tree = cKDTree(pts)
    cos_oppose = math.cos(math.radians(OPPOSING_ANGLE_DEG))

    seen: set[tuple[int, int]] = set()
    out: list[GraspCandidate] = []
    for i in seeds:
        nbr = np.asarray(tree.query_ball_point(pts[i], gripper.max_opening), dtype=np.int64)
        if len(nbr) < 2:
            continue
        nbr = nbr[np.einsum("ij,j->i", nrm[nbr], nrm[i]) <= -cos_oppose]
        if len(nbr) == 0:
            continue
        lines = pts[nbr] - pts[i]
        widths = np.linalg.norm(lines, axis=1)
        keep = (widths >= MIN_CONTACT_WIDTH) & (widths <= gripper.max_opening)
        nbr, lines, widths = nbr[keep], lines[keep], widths[keep]
        if len(nbr) == 0:
            continue
        u = lines / widths[:, None]
        cos1 = np.clip(u @ -nrm[i], -1.0, 1.0)
        cos2 = np.clip(np.einsum("ij,ij->i", u, nrm[nbr]), -1.0, 1.0)
        worst = np.maximum(np.arccos(cos1), np.arccos(cos2))
        order = np.lexsort((nbr, worst))
        j = int(nbr[order[0]])
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        contacts = Contacts(pts[i], nrm[i], pts[j], nrm[j])
        if not antipodal(contacts, 1.0):
            continue
        cand = make_candidate(*contacts.as_tuple(), index=len(out))
        cand.score = force_closure_score(cand.contacts)
        out.append(cand)
    return out


def grasp_frame_coords(points: np.ndarray, candidate: GraspCandidate) -> np.ndarray:
    """Express points in the (closing, approach, binormal) frame at the grasp center."""
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - candidate.center
    basis = np.stack([candidate.closing_axis, candidate.approach_axis, candidate.binormal])
    return rel @ basis.T


def gripper_boxes(candidate: GraspCandidate, gripper: GripperSpec) -> dict[str, np.ndarray]:
    """Axis-aligned boxes in the grasp frame, each as ``[[lo_u, lo_a, lo_b], [hi_u, hi_a, hi_b]]``.

    Fingers are ``finger_thickness`` thick along the closing axis and sit just
    outside the contacts; they span ``finger_depth`` along the approach axis,
    ending ``FINGERTIP_OVERHANG`` past the contacts.  The palm spans both
    fingers behind them.  ``closing`` is the region swept between the fingers.
    """
    half = candidate.width / 2
    t = gripper.finger_thickness
    a_lo = -gripper.finger_depth + FINGERTIP_OVERHANG
    a_hi = FINGERTIP_OVERHANG
    b = t / 2
    return {
        "finger1": np.array([[-half - t, a_lo, -b], [-half, a_hi, b]]),
        "finger2": np.array([[half, a_lo, -b], [half + t, a_hi, b]]),
        "palm": np.array([[-half - t, a_lo - t, -b], [half + t, a_lo, b]]),
        "closing": np.array([[-half, a_lo, -b], [half, a_hi, b]]),
    }


def _in_box(local: np.ndarray, box: np.ndarray, inflate: float) -> np.ndarray:
    lo = box[0] - inflate
    hi = box[1] + inflate
    return np.all((local >= lo) & (local <= hi), axis=1)


def collision_free(scene_cloud: PointCloud, candidate: GraspCandidate, gripper: GripperSpec = GripperSpec()) -> bool:
    """No obstacle point inside either finger's swept box or the palm (2 mm clearance)."""
    if len(scene_cloud) == 0:
        return True
    local = grasp_frame_coords(scene_cloud.points, candidate)
    boxes = gripper_boxes(candidate, gripper)
    for name in ("finger1", "finger2", "palm"):
        if _in_box(local, boxes[name], CLEARANCE).any():
            return False
    return True


def closing_region_mask(points: np.ndarray, candidate: GraspCandidate, gripper: GripperSpec = GripperSpec(),
                        inflate: float = 0.0, strict: bool = False) -> np.ndarray:
    """Boolean mask of points inside the region swept between the fingers."""
    local = grasp_frame_coords(points, candidate)
    box = gripper_boxes(candidate, gripper)["closing"]
    if not strict:
        return _in_box(local, box, inflate)
    lo, hi = box[0] - inflate, box[1] + inflate
    return np.all((local > lo) & (local < hi), axis=1)


def gripper_corners(candidate: GraspCandidate, gripper: GripperSpec = GripperSpec(), inflate: float = CLEARANCE) -> np.ndarray:
    """World-frame corners of the inflated finger and palm boxes."""
    basis = np.stack([candidate.closing_axis, candidate.approach_axis, candidate.binormal])
    corners = []
    boxes = gripper_boxes(candidate, gripper)
    for name in ("finger1", "finger2", "palm"):
        lo, hi = boxes[name][0] - inflate, boxes[name][1] + inflate
        for cu in (lo[0], hi[0]):
            for ca in (lo[1], hi[1]):
                for cb in (lo[2], hi[2]):
                    corners.append(np.array([cu, ca, cb]))
    return candidate.center + np.asarray(corners) @ basis
