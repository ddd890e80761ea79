"""Virtual RGB-D camera, ray-traced rendering and a ground-truth segmentation oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .errors import CameraError, EmptyCropError, VisibilityError
from .grasp import PointCloud
from .scene import PALETTE, TABLE_COLOR, ObjectInstance, Scene, Workspace

IMAGE_SIZE = 224
TABLE_ID = -1
NO_HIT = -2


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; ``pose`` is the 4x4 camera-to-world transform as nested tuples.

    Camera frame follows the OpenCV convention (x right, y down, z forward).
    Pixel ``(u, v)`` has its centre at integer coordinates.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    pose: tuple
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError("principal point outside the image")
        if np.asarray(self.pose).shape != (4, 4):
            raise CameraError("pose must be 4x4")

    @classmethod
    def from_matrix(cls, fx, fy, cx, cy, pose: np.ndarray, width=IMAGE_SIZE, height=IMAGE_SIZE) -> "CameraModel":
        pose_t = tuple(tuple(float(x) for x in row) for row in np.asarray(pose, dtype=np.float64))
        return cls(float(fx), float(fy), float(cx), float(cy), pose_t, int(width), int(height))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.pose, dtype=np.float64)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.position) @ self.rotation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points -> (u, v, depth) with continuous pixel coordinates."""
        pc = self.to_camera(points)
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return u, v, z


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    eye, target, up = (np.asarray(x, dtype=np.float64) for x in (eye, target, up))
    forward = target - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, eye
    return pose


@lru_cache(maxsize=16)
def default_camera(workspace: Workspace = Workspace(), elevation_deg: float = 45.0, distance: float = 0.8) -> CameraModel:
    """Camera on the -y side of the workspace looking at its table centre from 45 degrees up.

    The focal length is the largest that keeps the table corners and a
    15 cm-high box above them inside the image with a 4 px margin.
    """
    target = np.array([*workspace.center[:2], workspace.table_z])
    el = math.radians(elevation_deg)
    eye = target + distance * np.array([0.0, -math.cos(el), math.sin(el)])
    pose = look_at(eye, target)
    half = (IMAGE_SIZE - 1) / 2
    corners = np.array([
        [x, y, z]
        for x in (workspace.min[0], workspace.max[0])
        for y in (workspace.min[1], workspace.max[1])
        for z in (workspace.table_z, workspace.table_z + 0.15)
    ])
    pc = (corners - eye) @ pose[:3, :3]
    ratio = np.max(np.abs(pc[:, :2]) / pc[:, 2:3])
    f = (half - 4) / ratio
    return CameraModel.from_matrix(f, f, half, half, pose)


def backproject(pixel, depth: float, camera: CameraModel) -> np.ndarray:
    """Pixel + z-depth -> world point."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    u, v = pixel
    pc = np.array([depth * (u - camera.cx) / camera.fx, depth * (v - camera.cy) / camera.fy, depth])
    return camera.rotation @ pc + camera.position


@lru_cache(maxsize=16)
def _ray_grid(camera: CameraModel) -> np.ndarray:
    """World-frame ray directions with unit camera-z component, shape (H, W, 3)."""
    v, u = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
    dirs = d_cam @ camera.rotation.T
    dirs.setflags(write=False)
    return dirs


def _intersect_local(kind: str, dims, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Nearest positive hit parameter for rays ``o + t d`` in the object's local frame."""
    n = len(d)
    t = np.full(n, np.inf)
    if kind == "sphere":
        r = dims[0]
        a = np.einsum("ij,ij->i", d, d)
        b = 2 * d @ o
        c = o @ o - r * r
        disc = b * b - 4 * a * c
        ok = disc >= 0
        root = (-b[ok] - np.sqrt(disc[ok])) / (2 * a[ok])
        tt = np.where(root > 0, root, np.inf)
        t[ok] = tt
        return t
    if kind == "box":
        half = np.asarray(dims) / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-half - o) * inv
            t2 = (half - o) * inv
        # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
        par = d == 0
        inside = np.abs(o) <= half
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tnear = np.minimum(t1, t2).max(axis=1)
        tfar = np.maximum(t1, t2).min(axis=1)
        hit = (tnear <= tfar) & (tnear > 0)
        t[hit] = tnear[hit]
        return t
    r, h = dims
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (d[:, 0] * o[0] + d[:, 1] * o[1])
    c = o[0] ** 2 + o[1] ** 2 - r * r
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ts = (-b - np.sqrt(np.where(ok, disc, 0.0))) / (2 * np.where(ok, a, 1.0))
    zs = o[2] + ts * d[:, 2]
    side = ok & (ts > 0) & (np.abs(zs) <= h / 2)
    t = np.where(side, ts, t)
    for zc in (-h / 2, h / 2):
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (zc - o[2]) / d[:, 2]
        px = o[0] + tc * d[:, 0]
        py = o[1] + tc * d[:, 1]
        cap = (tc > 0) & (px * px + py * py <= r * r) & np.isfinite(tc)
        t = np.where(cap & (tc < t), tc, t)
    return t


@lru_cache(maxsize=8192)
def _trace_object(obj: ObjectInstance, camera: CameraModel):
    """Ray-trace one object over its projected bounding rectangle.

    Returns ``(v0, v1, u0, u1, t)`` with ``t`` of shape ``(v1-v0, u1-u0)``,
    ``inf`` where missed; ``None`` when the object is out of view.
    """
    r = obj.shape.bounding_radius
    hh = obj.shape.half_height
    cx, cy, cz = obj.pos
    corners = np.array([[cx + sx * r, cy + sy * r, cz + sz * hh] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    u, v, z = camera.project(corners)
    if np.any(z <= 0):
        u0, u1, v0, v1 = 0, camera.width, 0, camera.height
    else:
        u0 = max(0, int(math.floor(u.min())) - 1)
        u1 = min(camera.width, int(math.ceil(u.max())) + 2)
        v0 = max(0, int(math.floor(v.min())) - 1)
        v1 = min(camera.height, int(math.ceil(v.max())) + 2)
    if u0 >= u1 or v0 >= v1:
        return None
    dirs = _ray_grid(camera)[v0:v1, u0:u1].reshape(-1, 3)
    rot = obj.rotation
    o_local = (camera.position - np.asarray(obj.pos)) @ rot
    d_local = dirs @ rot
    t = _intersect_local(obj.shape.kind, obj.shape.dims, o_local, d_local).reshape(v1 - v0, u1 - u0)
    t.setflags(write=False)
    return v0, v1, u0, u1, t


def object_hits(obj: ObjectInstance, camera: CameraModel) -> np.ndarray:
    """Boolean image of the pixels the object covers when rendered alone."""
    mask = np.zeros((camera.height, camera.width), dtype=bool)
    tr = _trace_object(obj, camera)
    if tr is not None:
        v0, v1, u0, u1, t = tr
        mask[v0:v1, u0:u1] = np.isfinite(t)
    return mask


@dataclass
class Observation:
    rgb: np.ndarray
    depth: np.ndarray
    pixel_owner: np.ndarray
    cloud: PointCloud
    camera: CameraModel
    cloud_owner: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def owned_mask(self, obj_id: int) -> np.ndarray:
        return self.pixel_owner == obj_id

    def pixel_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.pixel_owner[self.pixel_owner >= 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def point_index(self) -> np.ndarray:
        """Image of cloud indices, -1 where there is no point."""
        idx = np.full(self.depth.shape, -1, dtype=np.int64)
        sp = self.cloud.source_pixels
        idx[sp[:, 1], sp[:, 0]] = np.arange(len(sp))
        return idx


def render(scene: Scene, camera: Optional[CameraModel] = None) -> Observation:
    """Z-buffer render: each pixel belongs to the nearest intersected object, else the table."""
    if camera is None:
        camera = default_camera(scene.workspace)
    H, W = camera.height, camera.width
    dirs = _ray_grid(camera)
    origin = camera.position
    depth = np.full((H, W), np.inf)
    owner = np.full((H, W), NO_HIT, dtype=np.int32)

    ws = scene.workspace
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = (ws.table_z - origin[2]) / dirs[..., 2]
    hit_xy = origin[:2] + t_table[..., None] * dirs[..., :2]
    on_table = (
        (t_table > 0)
        & (hit_xy[..., 0] >= ws.min[0]) & (hit_xy[..., 0] <= ws.max[0])
        & (hit_xy[..., 1] >= ws.min[1]) & (hit_xy[..., 1] <= ws.max[1])
    )
    depth[on_table] = t_table[on_table]
    owner[on_table] = TABLE_ID

    for obj in scene.objects:
        tr = _trace_object(obj, camera)
        if tr is None:
            continue
        v0, v1, u0, u1, t = tr
        sub_d = depth[v0:v1, u0:u1]
        closer = t < sub_d
        sub_d[closer] = t[closer]
        owner[v0:v1, u0:u1][closer] = obj.id

    hit = np.isfinite(depth)
    depth[~hit] = 0.0

    rgb = np.zeros((H, W, 3), dtype=np.uint8)
    rgb[owner == TABLE_ID] = TABLE_COLOR
    for obj in scene.objects:
        rgb[owner == obj.id] = PALETTE[obj.color]

    vs, us = np.nonzero(hit)
    pts = origin + depth[vs, us][:, None] * dirs[vs, us]
    cloud = PointCloud(points=pts, colors=rgb[vs, us], source_pixels=np.c_[us, vs])
    return Observation(rgb, depth, owner, cloud, camera, cloud_owner=owner[vs, us].astype(np.int64))


def part_pixels(obj: ObjectInstance, part_name: str, obs: Observation, owner_mask: np.ndarray) -> np.ndarray:
    """Restrict ``owner_mask`` to pixels whose surface point lies in the named part."""
    part = obj.part(part_name)
    out = np.zeros_like(owner_mask)
    if part is None or not owner_mask.any():
        return out
    vs, us = np.nonzero(owner_mask)
    pts = np.stack([backproject((u, v), obs.depth[v, u], obs.camera) for u, v in zip(us, vs)]) \
        if len(us) < 8 else _backproject_many(us, vs, obs.depth[vs, us], obs.camera)
    inside = part.contains_local(obj.to_local(pts))
    out[vs[inside], us[inside]] = True
    return out


def _backproject_many(us, vs, depths, camera: CameraModel) -> np.ndarray:
    pc = np.c_[depths * (us - camera.cx) / camera.fx, depths * (vs - camera.cy) / camera.fy, depths]
    return pc @ camera.rotation.T + camera.position


def _solo_part_pixels(obj: ObjectInstance, part_name: str, camera: CameraModel) -> int:
    tr = _trace_object(obj, camera)
    part = obj.part(part_name)
    if tr is None or part is None:
        return 0
    v0, v1, u0, u1, t = tr
    vs, us = np.nonzero(np.isfinite(t))
    pts = _backproject_many(us + u0, vs + v0, t[vs, us], camera)
    return int(part.contains_local(obj.to_local(pts)).sum())


def solo_pixel_count(obj: ObjectInstance, camera: CameraModel) -> int:
    tr = _trace_object(obj, camera)
    if tr is None:
        return 0
    return int(np.isfinite(tr[4]).sum())


def visible_fraction(scene: Scene, camera: Optional[CameraModel], obj_id: int,
                     observation: Optional[Observation] = None) -> float:
    """Pixels owned in the full render divided by pixels covered when rendered alone."""
    obj = scene.get(obj_id)
    if camera is None:
        camera = default_camera(scene.workspace)
    alone = solo_pixel_count(obj, camera)
    if alone == 0:
        raise VisibilityError(f"object {obj_id} projects to no pixels")
    obs = observation if observation is not None else render(scene, camera)
    return float(np.count_nonzero(obs.pixel_owner == obj_id)) / alone


@dataclass(frozen=True)
class SegmentationNoise:
    dilation_px: int = 0
    confidence_jitter: float = 0.0
    seed: int = 0


@dataclass
class SegmentMask:
    """Bitmask with a tight half-open bounding box ``[x1, x2) x [y1, y2)``."""

    pixels: np.ndarray
    bbox: tuple[int, int, int, int]
    confidence: float
    matched_text: str
    source_id: Optional[int] = None
    part: Optional[str] = None

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, confidence: float, text: str, source_id=None, part=None) -> "SegmentMask":
        if not pixels.any():
            raise ValueError("segment mask must be non-empty")
        return cls(pixels, tight_bbox(pixels), float(confidence), text, source_id, part)

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


def tight_bbox(pixels: np.ndarray) -> tuple[int, int, int, int]:
    vs, us = np.nonzero(pixels)
    return int(us.min()), int(vs.min()), int(us.max()) + 1, int(vs.max()) + 1


def parse_query(query: str) -> tuple[Optional[str], Optional[str], Optional[str]]:
    """``"green bottle"`` -> (green, bottle, None); ``"red knife handle"`` -> (red, knife, handle)."""
    tokens = query.lower().split()
    if not tokens:
        raise ValueError("query must be non-empty")
    color = None
    if len(tokens) >= 2 and tokens[0] in PALETTE:
        color, tokens = tokens[0], tokens[1:]
    category = tokens[0]
    part = " ".join(tokens[1:]) or None
    return color, category, part


def segment_by_text(obs: Observation, scene: Scene, query: str,
                    noise: SegmentationNoise = SegmentationNoise()) -> list[SegmentMask]:
    """One mask per visible object (or declared part) matching ``query``, best first."""
    color, category, part = parse_query(query)
    rng = np.random.default_rng(noise.seed)
    masks = []
    for obj in sorted(scene.objects, key=lambda o: o.id):
        if obj.category != category or (color is not None and obj.color != color):
            continue
        if part is not None and obj.part(part) is None:
            continue
        pix = obs.pixel_owner == obj.id
        if part is not None:
            pix = part_pixels(obj, part, obs, pix)
            alone = _solo_part_pixels(obj, part, obs.camera)
        else:
            alone = solo_pixel_count(obj, obs.camera)
        visible = int(pix.sum())
        if visible == 0 or alone == 0:
            continue
        conf = visible / alone
        if noise.confidence_jitter:
            conf *= 1.0 + noise.confidence_jitter * rng.uniform(-1.0, 1.0)
        conf = float(np.clip(conf, 0.0, 1.0))
        if noise.dilation_px > 0:
            pix = ndimage.binary_dilation(pix, iterations=noise.dilation_px)
        elif noise.dilation_px < 0:
            pix = ndimage.binary_erosion(pix, iterations=-noise.dilation_px)
        if not pix.any():
            continue
        masks.append(SegmentMask.from_pixels(pix, conf, query, obj.id, part))
    masks.sort(key=lambda m: (-m.confidence, m.source_id))
    return masks


Region = Union[tuple, SegmentMask, np.ndarray]


def region_mask(region: Region, shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    if isinstance(region, SegmentMask):
        return region.pixels.astype(bool)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return region
    x1, y1, x2, y2 = (int(round(c)) for c in region)
    if x2 <= 0 or y2 <= 0 or x1 >= W or y1 >= H or x1 >= x2 or y1 >= y2:
        raise ValueError(f"region {tuple(region)} does not intersect the image")
    m = np.zeros(shape, dtype=bool)
    m[max(0, y1):min(H, y2), max(0, x1):min(W, x2)] = True
    return m


def crop_cloud(obs: Observation, region: Region) -> PointCloud:
    """Cloud points whose source pixel lies in ``region`` (a bbox, mask or boolean image)."""
    m = region_mask(region, obs.shape)
    sp = obs.cloud.source_pixels
    keep = m[sp[:, 1], sp[:, 0]]
    if not keep.any():
        raise EmptyCropError("no cloud points inside the crop region")
    return obs.cloud.subset(keep)


def save_observation_png(obs: Observation, prefix: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``<prefix>_rgb.png`` and a 16-bit millimetre ``<prefix>_depth.png``."""
    from PIL import Image

    prefix = Path(prefix)
    rgb_path = prefix.with_name(prefix.name + "_rgb.png")
    depth_path = prefix.with_name(prefix.name + "_depth.png")
    Image.fromarray(obs.rgb).save(rgb_path)
    mm = np.clip(np.round(obs.depth * 1000), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(depth_path)
    return rgb_path, depth_path


def encode_png(rgb: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()
