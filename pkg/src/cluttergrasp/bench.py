"""Scene files, seeded benchmark suites, metrics and results export."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import jsonschema

from .errors import SceneFormatError, SuiteMismatchError
from .planner import EpisodeConfig, EpisodeResult, run_episode
from .scene import (
    PALETTE,
    Scene,
    SceneConfig,
    check_no_interpenetration,
    generate_scene,
    goal_for_category,
    goal_from_text,
    is_supported,
)

SCHEMA_VERSION = 1

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "workspace", "objects"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "workspace": {
            "type": "object",
            "required": ["min", "max"],
            "properties": {"min": _VEC3, "max": _VEC3},
        },
        "seed": {"type": "integer"},
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "category", "color", "shape", "pose"],
                "properties": {
                    "id": {"type": "integer"},
                    "category": {"type": "string", "minLength": 1},
                    "color": {"enum": list(PALETTE)},
                    "shape": {
                        "type": "object",
                        "required": ["kind", "dims"],
                        "properties": {
                            "kind": {"enum": ["sphere", "box", "cylinder"]},
                            "dims": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                                     "minItems": 1, "maxItems": 3},
                        },
                    },
                    "pose": {
                        "type": "object",
                        "required": ["pos"],
                        "properties": {"pos": _VEC3, "yaw": {"type": "number"}},
                    },
                    "parts": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["name", "box"],
                            "properties": {
                                "name": {"type": "string", "minLength": 1},
                                "box": {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6},
                            },
                        },
                    },
                },
            },
        },
    },
}

_METRICS = {
    "type": "object",
    "required": ["task_success_rate", "motion_number", "mean_steps_all"],
    "properties": {
        "task_success_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "motion_number": {"type": ["number", "null"]},
        "mean_steps_all": {"type": ["number", "null"]},
        "n_runs": {"type": "integer", "minimum": 0},
    },
}

RESULTS_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "cases"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "cases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["config_id", "episodes", "metrics"],
                "properties": {
                    "config_id": {"type": "string"},
                    "episodes": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["success", "motions", "trace", "seed", "config_id"],
                            "properties": {
                                "success": {"type": "boolean"},
                                "motions": {"type": "integer", "minimum": 0},
                                "trace": {"type": "array"},
                                "seed": {"type": "integer"},
                                "config_id": {"type": "string"},
                            },
                        },
                    },
                    "metrics": _METRICS,
                },
            },
        },
    },
}


# --------------------------------------------------------------------------
# scene files


def _where(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def validate_scene(scene: Scene, tol: float = 0.001) -> None:
    """Raise :class:`SceneFormatError` when a scene breaks a world invariant."""
    ws = scene.workspace
    for i, o in enumerate(scene.objects):
        if not ws.contains(o.pos):
            raise SceneFormatError(f"objects[{i}] (id {o.id}): position {list(o.pos)} outside the workspace")
        if not is_supported(scene, o, tol):
            raise SceneFormatError(f"objects[{i}] (id {o.id}): not supported by the table or another object")
    overlaps = check_no_interpenetration(scene.objects, tol)
    if overlaps:
        a, b = overlaps[0]
        raise SceneFormatError(f"objects {a} and {b} interpenetrate by more than {tol * 1000:g} mm")


def scene_from_json(text: str, source: str = "<scene>") -> Scene:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"{source}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if isinstance(data, dict) and data.get("schema_version") not in (None, SCHEMA_VERSION):
        raise SceneFormatError(f"{source}: unknown schema_version {data.get('schema_version')!r}")
    try:
        jsonschema.validate(data, SCENE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise SceneFormatError(f"{source}: field {_where(e)}: {e.message}") from e
    try:
        scene = Scene.from_dict(data)
    except (ValueError, KeyError) as e:
        raise SceneFormatError(f"{source}: {e}") from e
    validate_scene(scene)
    return scene


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), indent=2, sort_keys=True) + "\n"


def save_scene(scene: Scene, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(scene_to_json(scene), encoding="utf-8")
    return path


def load_scene(path: Union[str, Path]) -> Scene:
    path = Path(path)
    return scene_from_json(path.read_text(encoding="utf-8"), str(path))


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class SuiteMetrics:
    task_success_rate: float
    motion_number: Optional[float]
    mean_steps_all: Optional[float]
    n_runs: int

    @classmethod
    def from_episodes(cls, episodes: Sequence[EpisodeResult]) -> "SuiteMetrics":
        n = len(episodes)
        if n == 0:
            return cls(0.0, None, None, 0)
        wins = [e.motions for e in episodes if e.success]
        return cls(
            task_success_rate=len(wins) / n,
            motion_number=sum(wins) / len(wins) if wins else None,
            mean_steps_all=sum(e.motions for e in episodes) / n,
            n_runs=n,
        )

    def to_dict(self) -> dict:
        return {
            "task_success_rate": self.task_success_rate,
            "motion_number": self.motion_number,
            "mean_steps_all": self.mean_steps_all,
            "n_runs": self.n_runs,
        }


# --------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class BenchCase:
    case_id: str
    scene_config: SceneConfig
    seeds: tuple[int, ...]
    instruction: Optional[str] = None
    episode: EpisodeConfig = EpisodeConfig()

    def goal(self):
        if self.instruction:
            return goal_from_text(self.instruction)
        return goal_for_category(self.scene_config.goal_category)

    def to_dict(self) -> dict:
        d = {"id": self.case_id, "scene_config": self.scene_config.to_dict(), "seeds": list(self.seeds),
             "episode": self.episode.to_dict()}
        if self.instruction:
            d["instruction"] = self.instruction
        return d


@dataclass(frozen=True)
class Suite:
    cases: tuple[BenchCase, ...]
    policies: tuple[EpisodeConfig, ...] = ()
    name: str = "suite"

    @classmethod
    def from_dict(cls, d: dict) -> "Suite":
        cases = []
        for i, c in enumerate(d.get("cases", [])):
            seeds = c.get("seeds")
            if seeds is None:
                start = int(c.get("seed_start", 0))
                seeds = range(start, start + int(c.get("runs", 15)))
            cases.append(BenchCase(
                case_id=str(c.get("id", f"case{i}")),
                scene_config=SceneConfig.from_dict(c["scene_config"]),
                seeds=tuple(int(s) for s in seeds),
                instruction=c.get("instruction"),
                episode=EpisodeConfig.from_dict(c.get("episode", {})),
            ))
        policies = tuple(EpisodeConfig.from_dict(p) for p in d.get("policies", []))
        return cls(tuple(cases), policies, str(d.get("name", "suite")))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Suite":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class CaseResult:
    case_id: str
    config: EpisodeConfig
    episodes: list[EpisodeResult] = field(default_factory=list)

    @property
    def config_id(self) -> str:
        return f"{self.case_id}/{self.config.config_id}"

    @property
    def metrics(self) -> SuiteMetrics:
        return SuiteMetrics.from_episodes(self.episodes)

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "episodes": [e.to_dict() for e in self.episodes],
            "metrics": self.metrics.to_dict(),
        }


def run_case(case: BenchCase, config: Optional[EpisodeConfig] = None, runs: Optional[int] = None) -> CaseResult:
    config = config or case.episode
    seeds = case.seeds if runs is None else case.seeds[:runs]
    goal = case.goal()
    out = CaseResult(case.case_id, config)
    for seed in seeds:
        scene = generate_scene(case.scene_config, seed)
        result = run_episode(scene, goal, None, config, seed)
        result.config_id = out.config_id
        out.episodes.append(result)
    return out


def run_benchmark(suite: Suite, runs_per_case: Optional[int] = None) -> list[CaseResult]:
    """One result per case, each episode in seed order."""
    if runs_per_case is not None and runs_per_case < 1:
        raise ValueError("runs_per_case must be >= 1")
    return [run_case(c, None, runs_per_case) for c in suite.cases]


@dataclass(frozen=True)
class PairedDifference:
    case_id: str
    policy_a: str
    policy_b: str
    diffs: tuple[int, ...]

    @property
    def mean(self) -> Optional[float]:
        return sum(self.diffs) / len(self.diffs) if self.diffs else None

    @property
    def n_fewer(self) -> int:
        return sum(d < 0 for d in self.diffs)

    @property
    def n_equal(self) -> int:
        return sum(d == 0 for d in self.diffs)

    @property
    def n_more(self) -> int:
        return sum(d > 0 for d in self.diffs)

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "policy_a": self.policy_a, "policy_b": self.policy_b,
                "diffs": list(self.diffs), "mean": self.mean,
                "n_fewer": self.n_fewer, "n_equal": self.n_equal, "n_more": self.n_more}


def paired_differences(a: CaseResult, b: CaseResult) -> PairedDifference:
    """Per-seed motions of ``a`` minus motions of ``b``."""
    if a.case_id != b.case_id:
        raise SuiteMismatchError(f"cases differ: {a.case_id!r} vs {b.case_id!r}")
    seeds_a = [e.seed for e in a.episodes]
    seeds_b = [e.seed for e in b.episodes]
    if seeds_a != seeds_b:
        raise SuiteMismatchError(f"case {a.case_id!r}: seed lists differ")
    diffs = tuple(x.motions - y.motions for x, y in zip(a.episodes, b.episodes))
    return PairedDifference(a.case_id, a.config.config_id, b.config.config_id, diffs)


@dataclass
class PolicyComparison:
    results: dict[str, list[CaseResult]]
    paired: list[PairedDifference]

    def all_cases(self) -> list[CaseResult]:
        return [r for rs in self.results.values() for r in rs]

    def to_dict(self) -> dict:
        return {
            "policies": {pid: {r.case_id: r.metrics.to_dict() for r in rs} for pid, rs in self.results.items()},
            "paired": [p.to_dict() for p in self.paired],
        }


def compare_policies(suite: Suite, policies: Optional[Sequence[EpisodeConfig]] = None,
                     runs_per_case: Optional[int] = None) -> PolicyComparison:
    """Run every policy on the same scenes and seeds; pair each policy against the first."""
    policies = list(policies if policies is not None else suite.policies)
    if not policies:
        raise ValueError("no policies to compare")
    ids = [p.config_id for p in policies]
    if len(set(ids)) != len(ids):
        raise ValueError(f"policy ids must be distinct: {ids}")
    results = {p.config_id: [run_case(c, p, runs_per_case) for c in suite.cases] for p in policies}
    return _pair(results, ids)


def _pair(results: dict[str, list[CaseResult]], ids: Sequence[str]) -> PolicyComparison:
    base = results[ids[0]]
    paired = []
    for pid in ids[1:]:
        other = results[pid]
        if len(other) != len(base):
            raise SuiteMismatchError("policies ran different numbers of cases")
        paired += [paired_differences(a, b) for a, b in zip(base, other)]
    return PolicyComparison(results, paired)


def compare_results(results: dict[str, list[CaseResult]]) -> PolicyComparison:
    """Pair already-computed results; raises :class:`SuiteMismatchError` when they do not line up."""
    return _pair(results, list(results))


# --------------------------------------------------------------------------
# export

ROW_LABELS = ("Average Success", "Average Step", "Average Success Step")


def _fmt(x: Optional[float]) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.3f}"


def results_document(cases: Sequence[CaseResult]) -> dict:
    ordered = sorted(cases, key=lambda r: r.config_id)
    return {"schema_version": SCHEMA_VERSION, "cases": [r.to_dict() for r in ordered]}


def summary_table(cases: Sequence[CaseResult]) -> str:
    """Plain-text table, one column per case/policy.

    Average Success is the task success rate, Average Step the mean motions
    over all runs, and Average Success Step the mean motions over successful
    runs (NA without successes).
    """
    ordered = sorted(cases, key=lambda r: r.config_id)
    header = ["metric"] + [r.config_id for r in ordered]
    rows = [header]
    for label, key in zip(ROW_LABELS, ("task_success_rate", "mean_steps_all", "motion_number")):
        rows.append([label] + [_fmt(getattr(r.metrics, key)) for r in ordered])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def export_results(cases: Sequence[CaseResult], out_dir: Union[str, Path],
                   comparison: Optional[PolicyComparison] = None) -> dict[str, Path]:
    """Write ``results.json`` and ``table.txt`` (and ``paired.json`` for comparisons)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = results_document(cases)
    jsonschema.validate(doc, RESULTS_SCHEMA)
    paths = {"results": out / "results.json", "table": out / "table.txt"}
    paths["results"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["table"].write_text(summary_table(cases), encoding="utf-8")
    if comparison is not None:
        paths["paired"] = out / "paired.json"
        paths["paired"].write_text(json.dumps(comparison.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_results(path: Union[str, Path]) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    jsonschema.validate(doc, RESULTS_SCHEMA)
    return doc
