"""Command-line entry point: gen-scene, run, bench and score."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bench import (
    CaseResult,
    Suite,
    compare_policies,
    export_results,
    load_scene,
    results_document,
    run_benchmark,
    save_scene,
)
from .errors import ClutterGraspError, NoScoreError
from .grasp import MU_GRID, PointCloud, antipodal, estimate_normals, force_closure_score, misalignment_angles
from .planner import ABLATIONS, EpisodeConfig, run_episode
from .scene import SceneConfig, generate_scene, goal_from_text
from .selector import ENDPOINT_ENV

log = logging.getLogger("cluttergrasp")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_gen_scene(args) -> int:
    cfg = SceneConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    scene = generate_scene(cfg, args.seed)
    save_scene(scene, args.out)
    log.info("wrote %d objects to %s", len(scene), args.out)
    return 0


def cmd_run(args) -> int:
    scene = load_scene(args.scene)
    goal = goal_from_text(args.goal)
    config = EpisodeConfig(
        max_steps=args.max_steps,
        selector_kind=args.selector,
        ablation=frozenset(args.ablation or ()),
        endpoint=args.endpoint,
        timeout_s=args.timeout,
        max_retries=args.max_retries,
    )
    if args.selector == "remote" and not config.endpoint:
        log.warning("no endpoint given; every step will fall back to the scripted selector")
    result = run_episode(scene, goal, None, config, args.seed)
    case = CaseResult(Path(args.scene).stem, config, [result])
    result.config_id = case.config_id
    _write_json(Path(args.out), results_document([case]))
    log.info("success=%s motions=%d", result.success, result.motions)
    return 0


def cmd_bench(args) -> int:
    suite = Suite.load(args.suite)
    if suite.policies:
        comparison = compare_policies(suite, runs_per_case=args.runs)
        paths = export_results(comparison.all_cases(), args.out, comparison)
    else:
        paths = export_results(run_benchmark(suite, args.runs), args.out)
    sys.stdout.write(paths["table"].read_text(encoding="utf-8"))
    return 0


def _load_cloud_file(path: Path) -> dict:
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {k: data[k].tolist() for k in data.files}
    return json.loads(path.read_text(encoding="utf-8"))


def score_contacts(doc: dict) -> dict:
    """Score a stored contact pair.

    ``doc`` holds either explicit ``p1, n1, p2, n2`` or a cloud (``points``,
    optional ``normals`` and ``viewpoint``) with ``contacts = [i, j]`` indices.
    """
    if "contacts" in doc:
        pts = np.asarray(doc["points"], dtype=np.float64)
        i, j = (int(x) for x in doc["contacts"])
        if "normals" in doc:
            normals = np.asarray(doc["normals"], dtype=np.float64)
        else:
            cloud = estimate_normals(PointCloud(pts), k=int(doc.get("k", 16)), viewpoint=doc.get("viewpoint", (0, 0, 0)))
            normals = cloud.normals
        contacts = (pts[i], normals[i], pts[j], normals[j])
    else:
        contacts = tuple(np.asarray(doc[k], dtype=np.float64) for k in ("p1", "n1", "p2", "n2"))
    if not np.all(np.isfinite(np.concatenate(contacts))):
        raise ValueError("contact normal is undefined (degenerate neighbourhood)")
    t1, t2 = misalignment_angles(contacts)
    try:
        score: Optional[float] = force_closure_score(contacts)
    except NoScoreError:
        score = None
    return {
        "score": score,
        "mu_min": None if score is None else round(1.1 - score, 10),
        "antipodal": {f"{mu:.1f}": antipodal(contacts, mu) for mu in MU_GRID},
        "angles_deg": [float(np.degrees(t1)), float(np.degrees(t2))],
    }


def cmd_score(args) -> int:
    result = score_contacts(_load_cloud_file(Path(args.cloud)))
    sys.stdout.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0 if result["score"] is not None else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cluttergrasp", description="Closed-loop grasping in simulated clutter.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="generate a seeded clutter scene")
    g.add_argument("--config", required=True, help="scene config JSON")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scene)

    r = sub.add_parser("run", help="run one closed-loop episode on a scene file")
    r.add_argument("--scene", required=True)
    r.add_argument("--goal", required=True, help='instruction, e.g. "I need a fruit"')
    r.add_argument("--selector", choices=["scripted", "remote"], default="scripted")
    r.add_argument("--endpoint", default=os.environ.get(ENDPOINT_ENV))
    r.add_argument("--timeout", type=float, default=30.0)
    r.add_argument("--max-retries", type=int, default=2)
    r.add_argument("--max-steps", type=int, default=15)
    r.add_argument("--ablation", action="append", choices=ABLATIONS)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("--suite", required=True)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--runs", type=int, default=None, help="limit runs per case")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("score", help="force-closure score of a stored contact pair")
    s.add_argument("--cloud", required=True, help="JSON or .npz with points and contact indices")
    s.set_defaults(func=cmd_score)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ClutterGraspError, ValueError, OSError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
