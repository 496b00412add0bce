import json
import subprocess
import sys

import pytest

from corridor.cli import run


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "s.json"
    assert run(["gen", "--kind", "cut-in", "--seed", "3", "--out", str(path)]) == 0
    return path


def manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text())


def test_help_exit_zero(capsys):
    assert run(["--help"]) == 0
    assert "usage" in capsys.readouterr().out
    assert run(["plan", "--help"]) == 0


def test_unknown_flag_exit_two(capsys):
    assert run(["annotate", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run([]) == 2
    assert run(["fit", "--steps", "-1", "--out", "x.json"]) == 2


def test_annotate_writes_corridor_and_manifest(tmp_path, scene_file):
    out = tmp_path / "c.json"
    assert run(["annotate", "--scene", str(scene_file), "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())) == 6
    m = manifest(out)
    assert m["command"] == "annotate" and m["config"]["annotation"]["delta_obs"] == 0.5
    assert m["inputs"]["scene"] == [str(scene_file)] and m["outputs"] == [str(out)]
    assert m["degenerate"] == [False] * 6


def test_missing_corridor_exit_one_without_output(tmp_path, scene_file):
    out = tmp_path / "p.json"
    code = run(["plan", "--scene", str(scene_file), "--corridor", str(tmp_path / "missing.json"), "--out", str(out)])
    assert code == 1
    assert sorted(p.name for p in tmp_path.iterdir()) == ["s.json", "s.json.manifest.json"]


def test_bad_config_exit_one(tmp_path, scene_file):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"mystery": 1}')
    assert run(["annotate", "--scene", str(scene_file), "--config", str(cfg), "--out", str(tmp_path / "c.json")]) == 1
    assert not (tmp_path / "c.json").exists()


def test_gen_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(["gen", "--kind", "narrow", "--seed", "9", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_pipeline_plan_eval_render(tmp_path, scene_file):
    c, p, m, svg, r = (tmp_path / n for n in ("c.json", "p.json", "m.json", "r.svg", "r2.json"))
    assert run(["annotate", "--scene", str(scene_file), "--out", str(c)]) == 0
    assert run(["refine", "--scene", str(scene_file), "--corridor", str(c), "--out", str(r)]) == 0
    assert run(["plan", "--scene", str(scene_file), "--corridor", str(c), "--out", str(p)]) == 0
    plan = json.loads(p.read_text())
    assert set(plan) == {"status", "solve_time_s", "controls", "trajectory"}
    assert manifest(p)["status"] == plan["status"]
    assert run(["eval", "--scene", str(scene_file), "--plan", str(p), "--grid-res", "0.2", "--out", str(m)]) == 0
    report = json.loads(m.read_text())
    assert report["count"] == 1 and manifest(m)["config"]["grid_res"] == 0.2
    assert run(["render", "--scene", str(scene_file), "--corridor", str(c), "--plan", str(p), "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_plan_outputs_deterministic_apart_from_timing(tmp_path, scene_file):
    c = tmp_path / "c.json"
    run(["annotate", "--scene", str(scene_file), "--out", str(c)])
    outs = []
    for name in ("p1.json", "p2.json"):
        run(["plan", "--scene", str(scene_file), "--corridor", str(c), "--out", str(tmp_path / name)])
        d = json.loads((tmp_path / name).read_text())
        d.pop("solve_time_s")
        outs.append(d)
    assert outs[0] == outs[1]


def test_plan_with_position_reference(tmp_path, scene_file):
    c, ref, p = tmp_path / "c.json", tmp_path / "ref.json", tmp_path / "p.json"
    run(["annotate", "--scene", str(scene_file), "--out", str(c)])
    ref.write_text(json.dumps([[3.0 * k, 0.0] for k in range(1, 7)]))
    assert run(["plan", "--scene", str(scene_file), "--corridor", str(c), "--reference", str(ref), "--out", str(p)]) == 0
    ref.write_text(json.dumps([[1.0, 0.0]]))
    assert run(["plan", "--scene", str(scene_file), "--corridor", str(c), "--reference", str(ref), "--out", str(p)]) == 1


def test_eval_mismatched_lists(tmp_path, scene_file):
    assert run(["eval", "--scene", str(scene_file), str(scene_file), "--plan", str(scene_file), "--out", str(tmp_path / "m.json")]) == 1


def test_fit_small(tmp_path):
    out = tmp_path / "f.json"
    assert run(["fit", "--count", "2", "--steps", "2", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert len(res["history"]) == 3 and manifest(out)["seed"] == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "corridor", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gradcheck" in proc.stdout
