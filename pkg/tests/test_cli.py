import json
import subprocess
import sys

import numpy as np
import pytest

from cluttergrasp.bench import load_results, load_scene
from cluttergrasp.cli import main
from cluttergrasp.selector import ENDPOINT_ENV

from .stub_server import StubSelector


@pytest.fixture
def scene_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_objects": 4, "clutter_level": "light", "goal_category": "ball"}))
    out = tmp_path / "scene.json"
    assert main(["gen-scene", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    return out


def test_gen_scene(scene_file):
    scene = load_scene(scene_file)
    assert len(scene) == 4 and scene.seed == 3
    assert json.loads(scene_file.read_text())["schema_version"] == 1


def test_run(scene_file, tmp_path):
    out = tmp_path / "res.json"
    assert main(["run", "--scene", str(scene_file), "--goal", "Grasp a ball", "--out", str(out)]) == 0
    doc = load_results(out)
    ep = doc["cases"][0]["episodes"][0]
    assert ep["success"] and ep["config_id"] == "scene/scripted-max15-full"


def test_run_remote_falls_back(scene_file, tmp_path):
    out = tmp_path / "res.json"
    with StubSelector(["garbage"]) as srv:
        code = main(["run", "--scene", str(scene_file), "--goal", "Grasp a ball", "--selector", "remote",
                     "--endpoint", srv.url, "--max-retries", "0", "--timeout", "2", "--out", str(out)])
    assert code == 0
    trace = load_results(out)["cases"][0]["episodes"][0]["trace"]
    assert trace and all(t["provenance"] == "scripted_fallback" for t in trace if t["provenance"])


def test_run_endpoint_env(scene_file, tmp_path, monkeypatch):
    with StubSelector(["garbage"]) as srv:
        monkeypatch.setenv(ENDPOINT_ENV, srv.url)
        out = tmp_path / "res.json"
        assert main(["run", "--scene", str(scene_file), "--goal", "Grasp a ball", "--selector", "remote",
                     "--max-retries", "0", "--out", str(out)]) == 0
        assert len(srv.requests) >= 1


def test_run_ablation(scene_file, tmp_path):
    out = tmp_path / "res.json"
    assert main(["run", "--scene", str(scene_file), "--goal", "Grasp a ball", "--ablation", "no_grid",
                 "--ablation", "crop_only", "--out", str(out)]) == 0
    assert load_results(out)["cases"][0]["config_id"] == "scene/scripted-max15-crop_only-no_grid"


def test_bench(tmp_path, capsys):
    suite = {"cases": [{"id": "one", "scene_config": {"n_objects": 1, "goal_category": "ball"}, "seeds": [0, 1]}],
             "policies": [{}, {"ablation": ["no_selector"]}]}
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(suite))
    assert main(["bench", "--suite", str(path), "--out", str(tmp_path / "out")]) == 0
    printed = capsys.readouterr().out
    assert "Average Success" in printed and "one/scripted-max15-no_selector" in printed
    assert (tmp_path / "out" / "paired.json").exists()
    assert len(load_results(tmp_path / "out" / "results.json")["cases"]) == 2


def test_score_explicit_pair(tmp_path, capsys):
    path = tmp_path / "pair.json"
    path.write_text(json.dumps({"p1": [0, 0, 0], "n1": [-1, 0, 0], "p2": [0.04, 0, 0], "n2": [1, 0, 0]}))
    assert main(["score", "--cloud", str(path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["score"] == 1.0 and out["mu_min"] == 0.1 and all(out["antipodal"].values())


def test_score_not_antipodal(tmp_path, capsys):
    tilt = np.radians(50)
    path = tmp_path / "pair.json"
    path.write_text(json.dumps({"p1": [0, 0, 0], "n1": [-np.cos(tilt), np.sin(tilt), 0],
                                "p2": [0.04, 0, 0], "n2": [1, 0, 0]}))
    assert main(["score", "--cloud", str(path)]) == 3
    assert json.loads(capsys.readouterr().out)["score"] is None


def test_score_npz_cloud(tmp_path, capsys):
    g = np.linspace(-0.02, 0.02, 9)
    yy, zz = np.meshgrid(g, g)
    left = np.c_[np.zeros(yy.size), yy.ravel(), zz.ravel()]
    right = left + [0.05, 0, 0]
    pts = np.vstack([left, right])
    normals = np.vstack([np.tile([-1.0, 0, 0], (len(left), 1)), np.tile([1.0, 0, 0], (len(right), 1))])
    path = tmp_path / "cloud.npz"
    np.savez(path, points=pts, normals=normals, contacts=np.array([40, 40 + len(left)]))
    assert main(["score", "--cloud", str(path)]) == 0
    assert json.loads(capsys.readouterr().out)["score"] == 1.0


def test_errors_exit_2(tmp_path):
    assert main(["run", "--scene", str(tmp_path / "missing.json"), "--goal", "Grasp a ball",
                 "--out", str(tmp_path / "r.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["run", "--scene", str(bad), "--goal", "Grasp a ball", "--out", str(tmp_path / "r.json")]) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cluttergrasp.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("gen-scene", "run", "bench", "score"):
        assert cmd in proc.stdout
