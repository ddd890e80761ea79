"""Ground-truth tabletop world built from spheres, boxes and upright cylinders."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from .errors import GenerationError, InvalidCandidateError, ObjectLookupError
from .grasp import (
    CLEARANCE,
    GraspCandidate,
    GripperSpec,
    PointCloud,
    closing_region_mask,
    collision_free,
    gripper_corners,
)

PALETTE: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (40, 80, 220),
    "yellow": (235, 210, 40),
    "orange": (245, 140, 30),
    "purple": (130, 60, 180),
    "pink": (240, 130, 180),
    "brown": (130, 85, 45),
    "black": (25, 25, 25),
    "white": (245, 245, 245),
    "gray": (128, 128, 128),
    "cyan": (40, 200, 210),
}

TABLE_COLOR = (190, 175, 150)
CONTACT_TOLERANCE = 0.002
PENETRATION_TOLERANCE = 0.001
SURFACE_SPACING = 0.003
_EPS = 1e-9


class FailureReason(str, enum.Enum):
    COLLISION = "collision"
    LOW_QUALITY = "low_quality"
    EMPTY_GRIP = "empty_grip"
    STOCHASTIC = "stochastic"


@dataclass(frozen=True)
class Shape:
    kind: str
    dims: tuple[float, ...]

    def __post_init__(self):
        expected = {"sphere": 1, "box": 3, "cylinder": 2}
        if self.kind not in expected:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if len(self.dims) != expected[self.kind]:
            raise ValueError(f"{self.kind} needs {expected[self.kind]} dims, got {len(self.dims)}")
        if any(d <= 0 for d in self.dims):
            raise ValueError("shape dimensions must be strictly positive")

    @property
    def half_height(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return self.dims[2] / 2
        return self.dims[1] / 2

    @property
    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return 0.5 * math.sqrt(self.dims[0] ** 2 + self.dims[1] ** 2)
        return self.dims[0]

    def local_sdf(self, q: np.ndarray) -> np.ndarray:
        """Signed distance of local-frame points to the primitive surface."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=1) - self.dims[0]
        if self.kind == "box":
            d = np.abs(q) - np.asarray(self.dims) / 2
        else:
            r, h = self.dims
            d = np.c_[np.hypot(q[:, 0], q[:, 1]) - r, np.abs(q[:, 2]) - h / 2]
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Part:
    """Named sub-volume given as a local-frame box ``(xmin, ymin, zmin, xmax, ymax, zmax)``."""

    name: str
    box: tuple[float, float, float, float, float, float]

    def contains_local(self, q: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        lo = np.asarray(self.box[:3]) - tol
        hi = np.asarray(self.box[3:]) + tol
        return np.all((q >= lo) & (q <= hi), axis=1)

    def corners(self) -> np.ndarray:
        x0, y0, z0, x1, y1, z1 = self.box
        return np.array([[x, y, z] for x in (x0, x1) for y in (y0, y1) for z in (z0, z1)])


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: str
    color: str
    shape: Shape
    pos: tuple[float, float, float]
    yaw: float = 0.0
    parts: tuple[Part, ...] = ()

    def __post_init__(self):
        if self.color not in PALETTE:
            raise ValueError(f"color {self.color!r} not in palette")
        for part in self.parts:
            if np.any(self.shape.local_sdf(part.corners()) > 1e-9):
                raise ValueError(f"part {part.name!r} of object {self.id} leaves the parent volume")

    @property
    def label(self) -> str:
        return f"{self.color} {self.category}"

    @property
    def bottom(self) -> float:
        return self.pos[2] - self.shape.half_height

    @property
    def top(self) -> float:
        return self.pos[2] + self.shape.half_height

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.pos)) @ self.rotation

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return np.asarray(local) @ self.rotation.T + np.asarray(self.pos)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return self.shape.local_sdf(self.to_local(points))

    def part(self, name: str) -> Optional[Part]:
        for p in self.parts:
            if p.name == name:
                return p
        return None

    def with_z(self, z: float) -> "ObjectInstance":
        return replace(self, pos=(self.pos[0], self.pos[1], float(z)))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "color": self.color,
            "shape": {"kind": self.shape.kind, "dims": list(self.shape.dims)},
            "pose": {"pos": list(self.pos), "yaw": self.yaw},
            "parts": [{"name": p.name, "box": list(p.box)} for p in self.parts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectInstance":
        return cls(
            id=int(d["id"]),
            category=str(d["category"]),
            color=str(d["color"]),
            shape=Shape(str(d["shape"]["kind"]), tuple(float(x) for x in d["shape"]["dims"])),
            pos=tuple(float(x) for x in d["pose"]["pos"]),
            yaw=float(d["pose"].get("yaw", 0.0)),
            parts=tuple(Part(str(p["name"]), tuple(float(x) for x in p["box"])) for p in d.get("parts", ())),
        )


@dataclass(frozen=True)
class Workspace:
    min: tuple[float, float, float] = (-0.25, -0.25, 0.0)
    max: tuple[float, float, float] = (0.25, 0.25, 0.5)

    @property
    def table_z(self) -> float:
        return self.min[2]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.min) + np.asarray(self.max))

    def contains(self, p) -> bool:
        return all(lo - _EPS <= x <= hi + _EPS for lo, x, hi in zip(self.min, p, self.max))


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectInstance, ...]
    workspace: Workspace = Workspace()
    seed: int = 0

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")

    def __len__(self) -> int:
        return len(self.objects)

    @property
    def ids(self) -> list[int]:
        return [o.id for o in self.objects]

    def get(self, obj_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise ObjectLookupError(obj_id)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "workspace": {"min": list(self.workspace.min), "max": list(self.workspace.max)},
            "seed": self.seed,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        ws = d.get("workspace", {})
        return cls(
            objects=tuple(ObjectInstance.from_dict(o) for o in d["objects"]),
            workspace=Workspace(tuple(float(x) for x in ws["min"]), tuple(float(x) for x in ws["max"])),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class GoalSpec:
    instruction: str
    goal_categories: frozenset[str]

    def __post_init__(self):
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        if not self.goal_categories:
            raise ValueError("goal_categories must be non-empty")


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    grasped_id: Optional[int] = None
    failure_reason: Optional[FailureReason] = None
    scene_after: Optional[Scene] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.success and self.grasped_id is None:
            raise ValueError("successful outcome needs grasped_id")
        if not self.success and self.failure_reason is None:
            raise ValueError("failed outcome needs failure_reason")


@dataclass(frozen=True)
class GraspNoise:
    failure_prob: float = 0.0
    seed: int = 0


# --------------------------------------------------------------------------
# footprints and support


def _footprint(o: ObjectInstance):
    if o.shape.kind == "box":
        return ("rect", np.asarray(o.pos[:2]), np.asarray(o.shape.dims[:2]) / 2, o.yaw)
    return ("disc", np.asarray(o.pos[:2]), o.shape.dims[0], 0.0)


def _rect_axes(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, s], [-s, c]])


def footprint_penetration(a: ObjectInstance, b: ObjectInstance) -> float:
    """Overlap depth of two xy footprints; <= 0 when they are disjoint or touching."""
    ka, ca, ea, ya = _footprint(a)
    kb, cb, eb, yb = _footprint(b)
    if ka == "disc" and kb == "disc":
        return ea + eb - float(np.linalg.norm(ca - cb))
    if ka == "rect" and kb == "disc":
        ka, ca, ea, ya, kb, cb, eb, yb = kb, cb, eb, yb, ka, ca, ea, ya
    if ka == "disc":
        local = _rect_axes(yb) @ (ca - cb)
        clamped = np.clip(local, -eb, eb)
        d = float(np.linalg.norm(local - clamped))
        if d > 0:
            return ea - d
        return ea + float(np.min(eb - np.abs(local)))
    # rect vs rect by separating axes
    axes_a, axes_b = _rect_axes(ya), _rect_axes(yb)
    best = math.inf
    for axis in np.vstack([axes_a, axes_b]):
        ra = float(np.abs(axes_a @ axis) @ ea)
        rb = float(np.abs(axes_b @ axis) @ eb)
        sep = abs(float(axis @ (ca - cb)))
        best = min(best, ra + rb - sep)
    return best


def interpenetration(a: ObjectInstance, b: ObjectInstance) -> float:
    """Smaller of the xy-footprint and z-interval overlaps (bounding-prism model)."""
    z_overlap = min(a.top, b.top) - max(a.bottom, b.bottom)
    return min(footprint_penetration(a, b), z_overlap)


def check_no_interpenetration(objects: Iterable[ObjectInstance], tol: float = PENETRATION_TOLERANCE) -> list[tuple[int, int]]:
    objs = list(objects)
    bad = []
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            if interpenetration(objs[i], objs[j]) > tol:
                bad.append((objs[i].id, objs[j].id))
    return bad


def resting_on(scene: Scene, obj_id: int, tol: float = PENETRATION_TOLERANCE) -> list[int]:
    """Ids of objects whose bottom sits on the top of ``obj_id``."""
    base = scene.get(obj_id)
    out = []
    for o in scene.objects:
        if o.id == obj_id:
            continue
        if abs(o.bottom - base.top) <= tol and footprint_penetration(o, base) > _EPS:
            out.append(o.id)
    return out


def is_supported(scene: Scene, obj: ObjectInstance, tol: float = PENETRATION_TOLERANCE) -> bool:
    if abs(obj.bottom - scene.workspace.table_z) <= tol:
        return True
    return any(
        o.id != obj.id and abs(o.top - obj.bottom) <= tol and footprint_penetration(o, obj) > _EPS
        for o in scene.objects
    )


def remove_object(scene: Scene, obj_id: int) -> Scene:
    scene.get(obj_id)
    return replace(scene, objects=tuple(o for o in scene.objects if o.id != obj_id))


def settle(scene: Scene) -> Scene:
    """Drop every object straight down onto the highest top surface beneath its footprint."""
    order = sorted(scene.objects, key=lambda o: (o.bottom, o.id))
    table = scene.workspace.table_z
    settled: dict[int, ObjectInstance] = {}
    for o in order:
        support = table
        for q in settled.values():
            if q.top <= o.bottom + _EPS and footprint_penetration(o, q) > _EPS:
                support = max(support, q.top)
        if support < o.bottom:
            o = o.with_z(support + o.shape.half_height)
        settled[o.id] = o
    return replace(scene, objects=tuple(settled[o.id] for o in scene.objects))


# --------------------------------------------------------------------------
# dense ground-truth surface samples


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    polar = np.arccos(1 - 2 * i / n)
    azim = math.pi * (1 + 5 ** 0.5) * i
    return np.c_[np.sin(polar) * np.cos(azim), np.sin(polar) * np.sin(azim), np.cos(polar)]


def _grid(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(2, int(math.ceil((hi - lo) / spacing)) + 1)
    return np.linspace(lo, hi, n)


def _local_surface(shape: Shape, spacing: float) -> np.ndarray:
    if shape.kind == "sphere":
        r = shape.dims[0]
        n = max(64, int(math.ceil(4 * math.pi * r * r / spacing ** 2)))
        return r * _fibonacci_sphere(n)
    if shape.kind == "box":
        hx, hy, hz = (d / 2 for d in shape.dims)
        faces = []
        gx, gy, gz = _grid(-hx, hx, spacing), _grid(-hy, hy, spacing), _grid(-hz, hz, spacing)
        a, b = np.meshgrid(gx, gy)
        for z in (-hz, hz):
            faces.append(np.c_[a.ravel(), b.ravel(), np.full(a.size, z)])
        a, b = np.meshgrid(gx, gz)
        for y in (-hy, hy):
            faces.append(np.c_[a.ravel(), np.full(a.size, y), b.ravel()])
        a, b = np.meshgrid(gy, gz)
        for x in (-hx, hx):
            faces.append(np.c_[np.full(a.size, x), a.ravel(), b.ravel()])
        return np.vstack(faces)
    r, h = shape.dims
    n_around = max(16, int(math.ceil(2 * math.pi * r / spacing)))
    theta = np.linspace(0, 2 * math.pi, n_around, endpoint=False)
    zs = _grid(-h / 2, h / 2, spacing)
    t, z = np.meshgrid(theta, zs)
    side = np.c_[r * np.cos(t.ravel()), r * np.sin(t.ravel()), z.ravel()]
    caps = []
    for ring_r in _grid(0.0, r, spacing):
        m = max(1, int(math.ceil(2 * math.pi * ring_r / spacing)))
        th = np.linspace(0, 2 * math.pi, m, endpoint=False)
        ring = np.c_[ring_r * np.cos(th), ring_r * np.sin(th)]
        for zc in (-h / 2, h / 2):
            caps.append(np.c_[ring, np.full(len(ring), zc)])
    return np.vstack([side] + caps)


@lru_cache(maxsize=4096)
def _cached_surface(shape: Shape, spacing: float) -> np.ndarray:
    pts = _local_surface(shape, spacing)
    pts.setflags(write=False)
    return pts


def surface_points(obj: ObjectInstance, spacing: float = SURFACE_SPACING) -> np.ndarray:
    return obj.to_world(_cached_surface(obj.shape, spacing))


def scene_surface(scene: Scene, exclude: Iterable[int] = ()) -> tuple[np.ndarray, np.ndarray]:
    """All objects' surface samples and their owner ids."""
    skip = set(exclude)
    pts, owners = [], []
    for o in scene.objects:
        if o.id in skip:
            continue
        p = surface_points(o)
        pts.append(p)
        owners.append(np.full(len(p), o.id, dtype=np.int64))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.vstack(pts), np.concatenate(owners)


# --------------------------------------------------------------------------
# grasp execution


def contact_owner(scene: Scene, point, tol: float = CONTACT_TOLERANCE) -> int:
    best_id, best_d = None, math.inf
    for o in scene.objects:
        d = abs(float(o.sdf(point)[0]))
        if d < best_d or (d == best_d and best_id is not None and o.id < best_id):
            best_id, best_d = o.id, d
    if best_id is None or best_d > tol:
        raise InvalidCandidateError(f"contact {np.round(point, 4).tolist()} is {best_d:.4f} m from any surface")
    return best_id


def attribute_grasp(scene: Scene, candidate: GraspCandidate, gripper: GripperSpec = GripperSpec()) -> tuple[int, int]:
    """Return ``(grasped_id, n_points_between_fingers)``.

    The grasped object owns the majority of surface samples strictly between
    the fingers; ties and empty regions go to the owner of the contacts.
    """
    c = candidate.contacts
    owner1 = contact_owner(scene, c.p1)
    owner2 = contact_owner(scene, c.p2)
    pts, owners = scene_surface(scene)
    inside = owners[closing_region_mask(pts, candidate, gripper, strict=True)]
    if len(inside) == 0:
        return owner1, 0
    ids, counts = np.unique(inside, return_counts=True)
    top = ids[counts == counts.max()]
    if len(top) == 1:
        return int(top[0]), len(inside)
    for contact in (owner1, owner2):
        if contact in top:
            return contact, len(inside)
    return int(top.min()), len(inside)


def grasp_collides(scene: Scene, candidate: GraspCandidate, grasped_id: int, gripper: GripperSpec = GripperSpec()) -> bool:
    """Ground-truth collision: fingers, palm or closing region touch another object or the table."""
    pts, _ = scene_surface(scene, exclude=(grasped_id,))
    if not collision_free(PointCloud(pts), candidate, gripper):
        return True
    if len(pts) and closing_region_mask(pts, candidate, gripper, inflate=CLEARANCE).any():
        return True
    return bool(gripper_corners(candidate, gripper).min(axis=0)[2] < scene.workspace.table_z)


def execute_grasp(
    scene: Scene,
    candidate: GraspCandidate,
    noise: GraspNoise = GraspNoise(),
    gripper: GripperSpec = GripperSpec(),
    tau: float = 0.4,
) -> GraspOutcome:
    """Simulate a grasp attempt; the returned outcome carries the updated scene."""
    grasped, n_between = attribute_grasp(scene, candidate, gripper)

    def fail(reason):
        return GraspOutcome(False, None, reason, scene)

    if grasp_collides(scene, candidate, grasped, gripper):
        return fail(FailureReason.COLLISION)
    if candidate.score is None or candidate.score < tau:
        return fail(FailureReason.LOW_QUALITY)
    if candidate.width > gripper.max_opening or n_between == 0:
        return fail(FailureReason.EMPTY_GRIP)
    if noise.failure_prob > 0 and np.random.default_rng(noise.seed).random() < noise.failure_prob:
        return fail(FailureReason.STOCHASTIC)
    return GraspOutcome(True, grasped, None, settle(remove_object(scene, grasped)))


def goal_satisfied(outcome: GraspOutcome, goal: GoalSpec, scene: Scene) -> bool:
    """``scene`` is the world before the grasp, so the grasped object can be looked up."""
    if not outcome.success or outcome.grasped_id is None:
        return False
    return scene.get(outcome.grasped_id).category in goal.goal_categories


# --------------------------------------------------------------------------
# vocabulary and instructions


@dataclass(frozen=True)
class CategorySpec:
    kind: str
    ranges: tuple[tuple[float, float], ...]
    family: str
    handle_fraction: float = 0.0


CATEGORIES: dict[str, CategorySpec] = {
    "ball": CategorySpec("sphere", ((0.025, 0.034),), "toy"),
    "apple": CategorySpec("sphere", ((0.030, 0.038),), "fruit"),
    "orange": CategorySpec("sphere", ((0.030, 0.038),), "fruit"),
    "pear": CategorySpec("sphere", ((0.027, 0.034),), "fruit"),
    "mango": CategorySpec("sphere", ((0.028, 0.036),), "fruit"),
    "lemon": CategorySpec("sphere", ((0.024, 0.030),), "fruit"),
    "peach": CategorySpec("sphere", ((0.028, 0.035),), "fruit"),
    "cup": CategorySpec("cylinder", ((0.030, 0.038), (0.07, 0.10)), "drinkware"),
    "mug": CategorySpec("cylinder", ((0.032, 0.040), (0.08, 0.10)), "drinkware"),
    "bottle": CategorySpec("cylinder", ((0.028, 0.034), (0.14, 0.20)), "beverage"),
    "can": CategorySpec("cylinder", ((0.030, 0.034), (0.10, 0.12)), "beverage"),
    "box": CategorySpec("box", ((0.050, 0.075), (0.050, 0.075), (0.04, 0.09)), "household"),
    "sponge": CategorySpec("box", ((0.070, 0.090), (0.040, 0.060), (0.025, 0.040)), "household"),
    "carton": CategorySpec("box", ((0.040, 0.060), (0.065, 0.075), (0.11, 0.15)), "packaging"),
    "knife": CategorySpec("box", ((0.18, 0.22), (0.020, 0.026), (0.015, 0.020)), "tool", handle_fraction=0.4),
    "screwdriver": CategorySpec("box", ((0.15, 0.19), (0.022, 0.028), (0.020, 0.026)), "tool", handle_fraction=0.45),
}

# instruction phrase -> goal categories
INSTRUCTIONS: dict[str, frozenset[str]] = {
    "i need a fruit": frozenset({"apple", "orange", "pear", "mango", "lemon", "peach"}),
    "get something to eat": frozenset({"apple", "orange", "pear", "mango", "lemon", "peach"}),
    "grasp a round object": frozenset({"ball"}),
    "i want a round object": frozenset({"ball"}),
    "grasp a ball": frozenset({"ball"}),
    "give me the cup": frozenset({"cup"}),
    "get something to drink": frozenset({"cup", "mug", "bottle", "can"}),
    "get something to hold other things": frozenset({"cup", "mug", "box"}),
    "i want to cut something": frozenset({"knife"}),
}


def goal_from_text(text: str) -> GoalSpec:
    """Map an instruction to goal categories via known phrases, then category words."""
    norm = " ".join(text.lower().replace(".", " ").replace(",", " ").split())
    if norm in INSTRUCTIONS:
        return GoalSpec(text, INSTRUCTIONS[norm])
    found = set()
    for word in norm.split():
        for cand in (word, word.rstrip("s"), word[:-2] if word.endswith("es") else word):
            if cand in CATEGORIES:
                found.add(cand)
    if not found:
        raise ValueError(f"no known object category in instruction {text!r}")
    return GoalSpec(text, frozenset(found))


def goal_for_category(category: str) -> GoalSpec:
    for phrase, cats in INSTRUCTIONS.items():
        if cats == frozenset({category}):
            return GoalSpec(phrase[0].upper() + phrase[1:], cats)
    return GoalSpec(f"Grasp the {category}", frozenset({category}))


# --------------------------------------------------------------------------
# procedural generation


@dataclass(frozen=True)
class SceneConfig:
    n_objects: int = 5
    clutter_level: str = "light"
    goal_category: str = "ball"
    goal_visibility: str = "visible"
    exclude_categories: Optional[frozenset[str]] = None
    workspace: Workspace = Workspace()
    max_attempts: int = 400

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if self.goal_category not in CATEGORIES:
            raise ValueError(f"unknown goal category {self.goal_category!r}")
        if self.clutter_level not in ("light", "heavy"):
            raise ValueError("clutter_level must be 'light' or 'heavy'")
        if self.goal_visibility not in ("visible", "occluded", "buried"):
            raise ValueError("goal_visibility must be visible, occluded or buried")

    @property
    def excluded(self) -> frozenset[str]:
        if self.exclude_categories is not None:
            return self.exclude_categories | {self.goal_category}
        family = CATEGORIES[self.goal_category].family
        return frozenset(c for c, s in CATEGORIES.items() if s.family == family)

    def to_dict(self) -> dict:
        d = {
            "n_objects": self.n_objects,
            "clutter_level": self.clutter_level,
            "goal_category": self.goal_category,
            "goal_visibility": self.goal_visibility,
        }
        if self.exclude_categories is not None:
            d["exclude_categories"] = sorted(self.exclude_categories)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        excl = d.get("exclude_categories")
        kwargs = {k: d[k] for k in ("n_objects", "clutter_level", "goal_category", "goal_visibility") if k in d}
        if "workspace" in d:
            kwargs["workspace"] = Workspace(tuple(d["workspace"]["min"]), tuple(d["workspace"]["max"]))
        return cls(exclude_categories=None if excl is None else frozenset(excl), **kwargs)


def make_object(obj_id: int, category: str, color: str, rng: np.random.Generator,
                xy=(0.0, 0.0), yaw: float = 0.0, dims: Optional[tuple[float, ...]] = None) -> ObjectInstance:
    spec = CATEGORIES[category]
    if dims is None:
        dims = tuple(round(float(rng.uniform(lo, hi)), 4) for lo, hi in spec.ranges)
    shape = Shape(spec.kind, dims)
    parts: tuple[Part, ...] = ()
    if spec.handle_fraction > 0:
        hx, hy, hz = (d / 2 for d in dims)
        parts = (Part("handle", (-hx, -hy, -hz, -hx + 2 * hx * spec.handle_fraction, hy, hz)),)
    z = shape.half_height
    return ObjectInstance(obj_id, category, color, shape, (float(xy[0]), float(xy[1]), z), float(yaw), parts)


def _fits(ws: Workspace, o: ObjectInstance, margin: float = 0.01) -> bool:
    r = o.shape.bounding_radius
    return all(ws.min[i] + r + margin <= o.pos[i] <= ws.max[i] - r - margin for i in (0, 1))


def _place_on_table(o: ObjectInstance, placed: list[ObjectInstance], gap: float) -> bool:
    return all(footprint_penetration(o, q) <= -gap for q in placed)


def _stack_ok(o: ObjectInstance, placed: list[ObjectInstance]) -> bool:
    return not check_no_interpenetration(placed + [o])


def default_camera_direction(ws: Workspace) -> np.ndarray:
    from .perception import default_camera

    cam = default_camera(ws)
    d = cam.position[:2] - ws.center[:2]
    return d / np.linalg.norm(d)


class _Generator:
    def __init__(self, config: SceneConfig, seed: int):
        self.cfg = config
        self.rng = np.random.default_rng(seed)
        self.ws = config.workspace
        self.light = config.clutter_level == "light"
        self.gap = 0.02 if self.light else 0.012
        labels = [(c, col) for c in CATEGORIES if c not in config.excluded for col in PALETTE]
        self.distractor_labels = labels

    def pick_labels(self, n: int, goal_label: tuple[str, str]) -> list[tuple[str, str]]:
        idx = self.rng.permutation(len(self.distractor_labels))
        out = [self.distractor_labels[i] for i in idx if self.distractor_labels[i] != goal_label]
        while len(out) < n:  # label pool exhausted: allow repeats
            out += out
        return out[:n]

    def random_xy(self, r: float) -> np.ndarray:
        lo = np.asarray(self.ws.min[:2]) + r + 0.01
        hi = np.asarray(self.ws.max[:2]) - r - 0.01
        return self.rng.uniform(lo, hi)

    def place_random(self, obj_id, label, placed, protected: set[int]) -> Optional[ObjectInstance]:
        category, color = label
        stack_p = 0.0 if self.light else 0.35
        for _ in range(60):
            base = make_object(obj_id, category, color, self.rng, yaw=float(self.rng.uniform(-math.pi, math.pi)))
            if placed and self.rng.random() < stack_p:
                candidates = [q for q in placed if q.id not in protected and q.top < 0.2]
                if candidates:
                    q = candidates[int(self.rng.integers(len(candidates)))]
                    xy = np.asarray(q.pos[:2]) + self.rng.normal(0, 0.01, 2)
                    o = replace(base, pos=(float(xy[0]), float(xy[1]), q.top + base.shape.half_height))
                    if _fits(self.ws, o) and _stack_ok(o, placed):
                        return o
                    continue
            xy = self.random_xy(base.shape.bounding_radius)
            o = replace(base, pos=(float(xy[0]), float(xy[1]), base.shape.half_height))
            if _fits(self.ws, o) and _place_on_table(o, placed, self.gap):
                return o
        return None

    def shield(self, goal: ObjectInstance, labels, next_id: int) -> list[ObjectInstance]:
        """One to three occluders between the goal and the camera or resting on it."""
        toward_cam = default_camera_direction(self.ws)
        lateral = np.array([-toward_cam[1], toward_cam[0]])
        yaw_face = math.atan2(toward_cam[1], toward_cam[0])
        n_occ = int(self.rng.integers(1, 4))
        category = "carton" if "carton" not in self.cfg.excluded else "box"
        out: list[ObjectInstance] = []
        gr = goal.shape.bounding_radius
        for k in range(n_occ):
            mode = "front" if k == 0 else ("top" if self.rng.random() < 0.5 else "side")
            color = labels[k][1] if k < len(labels) else "gray"
            if mode == "top":
                dims = (round(float(self.rng.uniform(0.06, 0.075)), 4), round(float(self.rng.uniform(0.06, 0.075)), 4),
                        round(float(self.rng.uniform(0.03, 0.05)), 4))
                o = make_object(next_id + k, category, color, self.rng, dims=dims, yaw=float(self.rng.uniform(-0.5, 0.5)) + yaw_face)
                xy = np.asarray(goal.pos[:2]) + self.rng.normal(0, 0.005, 2)
                o = replace(o, pos=(float(xy[0]), float(xy[1]), goal.top + o.shape.half_height))
            else:
                width = round(float(self.rng.uniform(0.065, 0.075)), 4)
                depth = round(float(self.rng.uniform(0.04, 0.06)), 4)
                height = round(float(self.rng.uniform(0.11, 0.15)), 4)
                o = make_object(next_id + k, category, color, self.rng, dims=(depth, width, height), yaw=yaw_face)
                dist = gr + depth / 2 + float(self.rng.uniform(0.014, 0.02))
                shift = 0.0 if mode == "front" else float(self.rng.choice([-1, 1])) * float(self.rng.uniform(0.04, 0.06))
                if mode == "side":
                    dist += depth + 0.015
                xy = np.asarray(goal.pos[:2]) + toward_cam * dist + lateral * (shift + float(self.rng.normal(0, 0.004)))
                o = replace(o, pos=(float(xy[0]), float(xy[1]), o.shape.half_height))
            out.append(o)
        return out

    def attempt(self) -> Optional[Scene]:
        from .perception import default_camera, visible_fraction

        cfg = self.cfg
        goal_color = str(self.rng.choice(list(PALETTE)))
        goal = make_object(0, cfg.goal_category, goal_color, self.rng, yaw=float(self.rng.uniform(-math.pi, math.pi)))
        margin = 0.12 if cfg.goal_visibility != "visible" else 0.0
        lo = np.asarray(self.ws.min[:2]) + goal.shape.bounding_radius + 0.01 + margin
        hi = np.asarray(self.ws.max[:2]) - goal.shape.bounding_radius - 0.01 - margin
        xy = self.rng.uniform(lo, hi)
        goal = replace(goal, pos=(float(xy[0]), float(xy[1]), goal.shape.half_height))
        placed = [goal]
        labels = self.pick_labels(cfg.n_objects - 1, (goal.category, goal.color))
        protected = {goal.id}
        if cfg.goal_visibility != "visible" and cfg.n_objects > 1:
            occluders = self.shield(goal, labels, 1)[: cfg.n_objects - 1]
            for o in occluders:
                if not (_fits(self.ws, o, margin=0.0) and _stack_ok(o, placed)):
                    return None
                if o.bottom <= self.ws.table_z + _EPS and not _place_on_table(o, placed[1:], 0.0):
                    return None
                placed.append(o)
                protected.add(o.id)
            labels = labels[len(occluders):]
        for label in labels:
            o = self.place_random(len(placed), label, placed, protected)
            if o is None:
                return None
            placed.append(o)
        # ids are a permutation so the goal is not always id 0
        perm = self.rng.permutation(len(placed))
        objects = tuple(replace(o, id=int(perm[i])) for i, o in enumerate(placed))
        scene = settle(Scene(objects, self.ws, 0))
        if check_no_interpenetration(scene.objects):
            return None
        goal_id = int(perm[0])
        frac = visible_fraction(scene, default_camera(self.ws), goal_id)
        vis = cfg.goal_visibility
        if vis == "visible" and frac <= 0.15:
            return None
        if vis == "occluded" and not (0.0 < frac <= 0.15):
            return None
        if vis == "buried" and frac != 0.0:
            return None
        return scene


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Seeded clutter with exactly one goal-category object at the requested visibility."""
    if config.goal_visibility != "visible" and config.n_objects < 2:
        raise GenerationError("an occluded or buried goal needs at least one other object")
    gen = _Generator(config, seed)
    for _ in range(config.max_attempts):
        scene = gen.attempt()
        if scene is not None:
            return replace(scene, seed=int(seed))
    raise GenerationError(
        f"could not place {config.n_objects} objects ({config.goal_visibility} goal) "
        f"after {config.max_attempts} attempts"
    )


def goal_objects(scene: Scene, goal: GoalSpec) -> list[ObjectInstance]:
    return [o for o in scene.objects if o.category in goal.goal_categories]
