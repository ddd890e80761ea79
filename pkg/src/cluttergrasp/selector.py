"""Target selection: prompt template, response parsing, scripted and remote selectors."""

from __future__ import annotations

import base64
import json
import math
import os
import re
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import NoScoreError, ParseError, RemoteSelectorUnavailable, SelectionError
from .grasp import GripperSpec, force_closure_score
from .perception import IMAGE_SIZE, Observation, encode_png, part_pixels, tight_bbox, visible_fraction
from .scene import GoalSpec, ObjectInstance, Scene, Shape, resting_on

PROTOCOL = "thinkgrasp-v1"
ENDPOINT_ENV = "THINKGRASP_ENDPOINT"
V_MIN = 0.15
CROP_PAD = 8

LOCATION_WORDS = {
    "top-left": 1, "top": 2, "top-right": 3,
    "left": 4, "middle": 5, "right": 6,
    "bottom-left": 7, "bottom": 8, "bottom-right": 9,
}
# common spellings of the same nine words
_LOCATION_ALIASES = {"center": 5, "centre": 5, "top-center": 2, "bottom-center": 8, "top-middle": 2, "bottom-middle": 8,
                     "middle-left": 4, "middle-right": 6, "center-left": 4, "center-right": 6}


@dataclass
class SelectorRequest:
    rgb: np.ndarray
    instruction: str
    step_index: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.instruction or not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        if self.step_index < 0:
            raise ValueError("step_index must be >= 0")


@dataclass(frozen=True)
class ObjectProperty:
    color_name: str
    grasping_score: int
    preferred_location: int

    def __post_init__(self):
        if not 0 <= self.grasping_score <= 100:
            raise ValueError(f"grasping score {self.grasping_score} outside 0..100")
        if not 1 <= self.preferred_location <= 9:
            raise ValueError(f"preferred location {self.preferred_location} outside 1..9")


@dataclass(frozen=True)
class SelectorResponse:
    kind: str
    selected: str
    crop_box: tuple[int, int, int, int]
    properties: tuple[ObjectProperty, ...]

    def __post_init__(self):
        if self.kind not in ("object", "part"):
            raise ValueError(f"kind must be 'object' or 'part', got {self.kind!r}")
        x1, y1, x2, y2 = self.crop_box
        if not (0 <= x1 < x2 <= IMAGE_SIZE and 0 <= y1 < y2 <= IMAGE_SIZE):
            raise ValueError(f"crop box {self.crop_box} outside the image or degenerate")
        if self.property_of(self.selected) is None:
            raise ValueError(f"selected {self.selected!r} missing from properties")

    def property_of(self, name: str) -> Optional[ObjectProperty]:
        for p in self.properties:
            if p.color_name.lower() == name.lower():
                return p
        return None

    @property
    def preferred_location(self) -> int:
        return self.property_of(self.selected).preferred_location

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "selected": self.selected,
            "crop_box": list(self.crop_box),
            "properties": [
                {"color_name": p.color_name, "grasping_score": p.grasping_score, "preferred_location": p.preferred_location}
                for p in self.properties
            ],
        }


# --------------------------------------------------------------------------
# prompt and wire text

PROMPT_TEMPLATE = """\
Given a 224×224 input image and the provided instruction, perform the following steps:
Target Object Selection:
Identify the object in the image that best matches the instruction. If the target object is found, select it as the target object.
If the target object is not visible, select the most cost-effective object or object part considering ease of grasping, importance, and safety.
If the object has a handle or a part that is easier or safer to grasp, select the part. [for example the handle of a knife]
Consider the geometric shape of the objects and the gripper's success rate when selecting the target object or object part.
Output the name of the selected object or object part as [object:color and name] or [object part:color and name].
Round object means like ball. Cup is different from mug.
Cropping Box Calculation:
Calculate a cropping box that includes the target object and all surrounding objects that might be relevant for grasping.
Provide the coordinates of the cropping box in the format (top-left x, top-left y, bottom-right x, bottom-right y).
Object Properties within Cropping Box:
For each object within the cropping box, provide the following properties:
Grasping Score: Evaluate the ease or difficulty of grasping the object on a scale from 0 to 100 (0 being extremely difficult, 100 being extremely easy).
Preferred Grasping Location: Divide the cropping box into a 3×3 grid and return a number from 1 to 9 indicating the preferred grasping location (1 for top-left, 9 for bottom-right).
Additionally, consider the preferred grasping location that is most successful for the UR5 robotic arm and gripper.
Output should be in the following format:
Selected Object/Object Part: [object:color and name] or [object part:color and name]
Cropping Box Coordinates: (top-left x, top-left y, bottom-right x, bottom-right y)
Objects and Their Properties:
Object: [color and name]
Grasping Score: [value]
Preferred Grasping Location: [value]
"""


def build_prompt(request: SelectorRequest) -> str:
    return f"{PROMPT_TEMPLATE}\nInstruction: {request.instruction.strip()}\n"


def format_response(r: SelectorResponse) -> str:
    tag = "object" if r.kind == "object" else "object part"
    lines = [
        f"Selected Object/Object Part: [{tag}:{r.selected}]",
        "Cropping Box Coordinates: ({}, {}, {}, {})".format(*r.crop_box),
        "Objects and Their Properties:",
    ]
    for p in r.properties:
        lines += [
            f"Object: {p.color_name}",
            f"Grasping Score: {p.grasping_score}",
            f"Preferred Grasping Location: {p.preferred_location}",
        ]
    return "\n".join(lines) + "\n"


_SELECTED_RE = re.compile(r"^\[?\s*(object part|object)\s*:\s*([^\[\]:]+?)\s*\]?$", re.IGNORECASE)
_BOX_RE = re.compile(r"^[\(\[]?\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*[\)\]]?$")
_INT_RE = re.compile(r"^\d+$")


def _field(line: str) -> tuple[str, str]:
    line = line.strip().lstrip("-*# ").replace("**", "")
    if ":" not in line:
        return "", line
    key, value = line.split(":", 1)
    return key.strip().lower(), value.strip()


def _name(value: str) -> str:
    v = value.strip().strip("[]").strip()
    if not v or not re.fullmatch(r"[A-Za-z][A-Za-z \-]*", v):
        raise ParseError(f"bad object name {value!r}")
    return " ".join(v.lower().split())


def _location(value: str) -> int:
    v = value.strip().strip("[]").strip().lower().replace(" ", "-")
    if _INT_RE.match(v):
        n = int(v)
    elif v in LOCATION_WORDS:
        n = LOCATION_WORDS[v]
    elif v in _LOCATION_ALIASES:
        n = _LOCATION_ALIASES[v]
    else:
        raise ParseError(f"unknown preferred location {value!r}")
    if not 1 <= n <= 9:
        raise ParseError(f"preferred location {n} outside 1..9")
    return n


def parse_response(text: str) -> SelectorResponse:
    """Line-oriented parse of the selector output format.

    Unknown lines are skipped.  Every recognised field must be well formed:
    a malformed value is an error, never silently replaced.
    """
    if not isinstance(text, str):
        raise ParseError("response must be text")
    kind = selected = box = None
    props: list[ObjectProperty] = []
    current: Optional[dict] = None

    def close(cur):
        if cur is None:
            return
        missing = [k for k in ("score", "location") if k not in cur]
        if missing:
            raise ParseError(f"object {cur['name']!r} lacks {', '.join(missing)}")
        props.append(ObjectProperty(cur["name"], cur["score"], cur["location"]))

    for raw in text.splitlines():
        key, value = _field(raw)
        if key in ("selected object/object part", "selected object", "selected object part"):
            if selected is not None:
                raise ParseError("duplicate selected line")
            m = _SELECTED_RE.match(value)
            if not m:
                raise ParseError(f"bad selected value {value!r}")
            kind = "part" if m.group(1).lower() == "object part" else "object"
            selected = _name(m.group(2))
        elif key in ("cropping box coordinates", "cropping box"):
            if box is not None:
                raise ParseError("duplicate cropping box")
            m = _BOX_RE.match(value)
            if not m:
                raise ParseError(f"bad cropping box {value!r}")
            box = tuple(int(g) for g in m.groups())
        elif key in ("object", "object part"):
            close(current)
            current = {"name": _name(value)}
        elif key == "grasping score":
            if current is None or "score" in current:
                raise ParseError("grasping score outside an object block")
            v = value.strip().strip("[]").strip()
            if not _INT_RE.match(v):
                raise ParseError(f"bad grasping score {value!r}")
            if not 0 <= int(v) <= 100:
                raise ParseError(f"grasping score {v} outside 0..100")
            current["score"] = int(v)
        elif key == "preferred grasping location":
            if current is None or "location" in current:
                raise ParseError("preferred location outside an object block")
            current["location"] = _location(value)
    close(current)

    if selected is None:
        raise ParseError("missing 'Selected Object/Object Part' line")
    if box is None:
        raise ParseError("missing cropping box")
    try:
        return SelectorResponse(kind, selected, box, tuple(props))
    except ValueError as e:
        raise ParseError(str(e)) from e


# --------------------------------------------------------------------------
# scripted oracle


def analytic_grasp_score(shape: Shape, gripper: GripperSpec = GripperSpec()) -> float:
    """Best force-closure score over opposing face/diameter pairs of a lone primitive."""
    if shape.kind == "sphere":
        widths = [2 * shape.dims[0]]
    elif shape.kind == "cylinder":
        widths = [2 * shape.dims[0], shape.dims[1]]
    else:
        widths = list(shape.dims)
    best = 0.0
    for w in widths:
        if w > gripper.max_opening:
            continue
        p1, p2 = np.zeros(3), np.array([w, 0.0, 0.0])
        try:
            best = max(best, force_closure_score((p1, np.array([-1.0, 0, 0]), p2, np.array([1.0, 0, 0]))))
        except NoScoreError:
            pass
    return best


def centrality(centroid, shape=(IMAGE_SIZE, IMAGE_SIZE)) -> float:
    """1 at the image centre, 0 at the corners."""
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    return 1.0 - math.hypot(centroid[0] - cx, centroid[1] - cy) / math.hypot(cx, cy)


def occluder_priority(area: float, centroid) -> float:
    return area * centrality(centroid)


def _cell(bbox, px) -> int:
    from .planner import cell_of

    return cell_of(bbox, px)


@dataclass(frozen=True)
class ScriptedParams:
    v_min: float = V_MIN
    redirect_stacks: bool = True


class _SceneView:
    """Per-observation bookkeeping shared by the oracle selectors."""

    def __init__(self, obs: Observation, scene: Scene):
        self.obs = obs
        self.scene = scene
        self.masks = {o.id: obs.pixel_owner == o.id for o in scene.objects}
        self.areas = {i: int(m.sum()) for i, m in self.masks.items()}

    def visible(self) -> list[int]:
        return sorted(i for i, a in self.areas.items() if a > 0)

    def centroid(self, mask: np.ndarray) -> tuple[float, float]:
        vs, us = np.nonzero(mask)
        return float(us.mean()), float(vs.mean())

    def target_mask(self, obj: ObjectInstance) -> tuple[np.ndarray, Optional[str]]:
        part = obj.parts[0].name if obj.parts else None
        mask = self.masks[obj.id]
        if part is not None:
            pm = part_pixels(obj, part, self.obs, mask)
            if pm.any():
                return pm, part
        return mask, None

    def neighbours(self, obj_id: int) -> list[int]:
        grown = ndimage.binary_dilation(self.masks[obj_id], iterations=2)
        owners = np.unique(self.obs.pixel_owner[grown])
        return [int(o) for o in owners if o >= 0 and o != obj_id]

    def top_of_stack(self, obj_id: int) -> int:
        """Follow objects resting on ``obj_id`` up to one with nothing on top."""
        seen = {obj_id}
        current = obj_id
        while True:
            above = [i for i in resting_on(self.scene, current) if i not in seen and self.areas.get(i, 0) > 0]
            if not above:
                return current
            current = max(above, key=lambda i: (self.areas[i], -i))
            seen.add(current)

    def respond(self, obj_id: int) -> SelectorResponse:
        obj = self.scene.get(obj_id)
        mask, part = self.target_mask(obj)
        selected = obj.label if part is None else f"{obj.label} {part}"
        crop = mask.copy()
        for n in self.neighbours(obj_id):
            crop |= self.masks[n]
        x1, y1, x2, y2 = tight_bbox(crop)
        H, W = mask.shape
        box = (max(0, x1 - CROP_PAD), max(0, y1 - CROP_PAD), min(W, x2 + CROP_PAD), min(H, y2 + CROP_PAD))
        props = [ObjectProperty(selected, round(100 * analytic_grasp_score(obj.shape)),
                                _cell(tight_bbox(mask), self.centroid(mask)))]
        region = np.zeros_like(mask)
        region[box[1]:box[3], box[0]:box[2]] = True
        for other in self.visible():
            if other == obj_id or not (self.masks[other] & region).any():
                continue
            o = self.scene.get(other)
            m = self.masks[other]
            props.append(ObjectProperty(o.label, round(100 * analytic_grasp_score(o.shape)),
                                        _cell(tight_bbox(m), self.centroid(m))))
        return SelectorResponse("object" if part is None else "part", selected, box, tuple(props))


def _solo_footprint(scene: Scene, obs: Observation, ids: Sequence[int]) -> np.ndarray:
    from .perception import object_hits

    fp = np.zeros(obs.shape, dtype=bool)
    for i in ids:
        fp |= object_hits(scene.get(i), obs.camera)
    return fp


def scripted_select(obs: Observation, goal: GoalSpec, scene: Scene, params: ScriptedParams = ScriptedParams()) -> SelectorResponse:
    """Select a sufficiently visible goal, else the occluder most likely to reveal it."""
    view = _SceneView(obs, scene)
    visible = view.visible()
    if not visible:
        raise SelectionError("nothing is visible")
    goals = [o.id for o in scene.objects if o.category in goal.goal_categories]
    fractions = {g: visible_fraction(scene, obs.camera, g, observation=obs) for g in goals}
    ready = [g for g in goals if fractions[g] >= params.v_min]
    if ready:
        chosen = max(ready, key=lambda g: (fractions[g], -g))
    else:
        pool = [i for i in visible if i not in goals]
        if goals:
            footprint = _solo_footprint(scene, obs, goals)
            covering = [i for i in pool if (view.masks[i] & footprint).any()]
            pool = covering or pool
        if not pool:
            pool = visible
        chosen = max(pool, key=lambda i: (occluder_priority(view.areas[i], view.centroid(view.masks[i])), -i))
    if params.redirect_stacks:
        chosen = view.top_of_stack(chosen)
    return view.respond(chosen)


def random_occluder_select(obs: Observation, goal: GoalSpec, scene: Scene, rng: np.random.Generator,
                           params: ScriptedParams = ScriptedParams()) -> SelectorResponse:
    """Baseline: take a visible goal like the oracle, otherwise remove a random visible object."""
    view = _SceneView(obs, scene)
    visible = view.visible()
    if not visible:
        raise SelectionError("nothing is visible")
    goals = [o.id for o in scene.objects if o.category in goal.goal_categories]
    ready = [g for g in goals if visible_fraction(scene, obs.camera, g, observation=obs) >= params.v_min]
    if ready:
        chosen = min(ready)
    else:
        pool = [i for i in visible if i not in goals] or visible
        chosen = pool[int(rng.integers(len(pool)))]
    if params.redirect_stacks:
        chosen = view.top_of_stack(chosen)
    return view.respond(chosen)


def goal_only_select(obs: Observation, goal: GoalSpec, scene: Scene) -> SelectorResponse:
    """No reasoning about occlusion: any visible goal, else the largest visible object."""
    view = _SceneView(obs, scene)
    visible = view.visible()
    if not visible:
        raise SelectionError("nothing is visible")
    goals = [i for i in visible if scene.get(i).category in goal.goal_categories]
    if goals:
        chosen = max(goals, key=lambda i: (view.areas[i], -i))
    else:
        chosen = max(visible, key=lambda i: (view.areas[i], -i))
    return view.respond(chosen)


# --------------------------------------------------------------------------
# remote client


@dataclass(frozen=True)
class RetryPolicy:
    timeout_s: float = 30.0
    max_retries: int = 2


def _select_url(endpoint: str) -> str:
    e = endpoint.rstrip("/")
    return e if e.endswith("/v1/select") else e + "/v1/select"


def remote_select(request: SelectorRequest, endpoint: Optional[str] = None,
                  policy: RetryPolicy = RetryPolicy()) -> SelectorResponse:
    """POST the observation to a remote selector; retry on timeout or bad output."""
    endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
    if not endpoint:
        raise RemoteSelectorUnavailable(f"no endpoint given and {ENDPOINT_ENV} is unset")
    body = json.dumps({
        "image_png_b64": base64.b64encode(encode_png(request.rgb)).decode("ascii"),
        "instruction": request.instruction,
        "step": int(request.step_index),
        "protocol": PROTOCOL,
    }).encode("utf-8")
    errors = []
    for _ in range(policy.max_retries + 1):
        req = urllib.request.Request(_select_url(endpoint), data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=policy.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            raw = payload["raw_text"]
            return parse_response(raw)
        except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError) as e:
            errors.append(f"transport: {e}")
        except (ValueError, KeyError, TypeError) as e:  # bad JSON, missing field, ParseError
            errors.append(f"response: {e}")
    raise RemoteSelectorUnavailable(f"{len(errors)} attempts failed; last: {errors[-1]}")


# --------------------------------------------------------------------------
# selector backends used by the planner


class ScriptedSelector:
    kind = "scripted"

    def __init__(self, params: ScriptedParams = ScriptedParams()):
        self.params = params

    def __call__(self, obs, goal, scene, request, rng=None) -> SelectorResponse:
        return scripted_select(obs, goal, scene, self.params)


class RandomOccluderSelector:
    kind = "random_occluder"

    def __init__(self, params: ScriptedParams = ScriptedParams()):
        self.params = params

    def __call__(self, obs, goal, scene, request, rng=None) -> SelectorResponse:
        if rng is None:
            rng = np.random.default_rng(request.step_index)
        return random_occluder_select(obs, goal, scene, rng, self.params)


class GoalOnlySelector:
    kind = "goal_only"

    def __call__(self, obs, goal, scene, request, rng=None) -> SelectorResponse:
        return goal_only_select(obs, goal, scene)


class RemoteSelector:
    kind = "remote"

    def __init__(self, endpoint: Optional[str] = None, policy: RetryPolicy = RetryPolicy()):
        self.endpoint = endpoint
        self.policy = policy

    def __call__(self, obs, goal, scene, request, rng=None) -> SelectorResponse:
        return remote_select(request, self.endpoint, self.policy)


def make_selector(kind: str, endpoint: Optional[str] = None, policy: RetryPolicy = RetryPolicy()):
    if kind == "scripted":
        return ScriptedSelector()
    if kind == "remote":
        return RemoteSelector(endpoint, policy)
    if kind == "random_occluder":
        return RandomOccluderSelector()
    if kind == "goal_only":
        return GoalOnlySelector()
    raise ValueError(f"unknown selector kind {kind!r}")
