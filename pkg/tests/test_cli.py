import json
import subprocess
import sys

import numpy as np
import pytest

from dtireg import io
from dtireg.basis import band_limited_field
from dtireg.cli import main
from dtireg.fields import GridSpec, VelocityField


@pytest.fixture
def ball(tmp_path):
    path = tmp_path / "t.dtir"
    assert main(["phantom", "--dims", "8,8,8", "--noise", "0.02", "--seed", "3",
                 "--out", str(path)]) == 0
    return path


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_phantom_written(ball):
    img = io.read_tensor_image(ball)
    assert img.grid.dims == (8, 8, 8)


def test_register_identical(ball, tmp_path, capsys):
    rc = main(["register", "--floating", str(ball), "--target", str(ball),
               "--out-velocity", str(tmp_path / "v.velf"), "--out-report", str(tmp_path / "r.json")])
    assert rc == 0
    report = io.read_json(tmp_path / "r.json")
    assert report["status"] == "converged" and report["total"] <= 1e-10
    assert report["config"]["max_iter"] == 12
    assert json.loads(capsys.readouterr().out)["total"] == report["total"]
    assert not io.read_velocity(tmp_path / "v.velf").samples.any()


def test_register_budget_exit(tmp_path, capsys):
    t, d = tmp_path / "t.dtir", tmp_path / "d.dtir"
    main(["phantom", "--dims", "8,8,8", "--out", str(t)])
    main(["phantom", "--dims", "8,8,8", "--kind", "fiber-bundle", "--direction", "0,1,0",
          "--out", str(d)])
    cfg = tmp_path / "cfg.json"
    io.write_json(cfg, {"modes": 1, "max_iter": 1})
    rc = main(["register", "--floating", str(t), "--target", str(d), "--config", str(cfg),
               "--out-velocity", str(tmp_path / "v.velf")])
    assert rc == 2
    assert json.loads(capsys.readouterr().out)["status"] == "budget"


def test_apply_zero_velocity_is_bitwise(ball, tmp_path):
    img = io.read_tensor_image(ball)
    vpath = tmp_path / "zero.velf"
    io.write_velocity(VelocityField.zeros(img.grid), vpath)
    out = tmp_path / "out.dtir"
    assert main(["apply", "--image", str(ball), "--velocity", str(vpath), "--out", str(out),
                 "--out-deformation", str(tmp_path / "h.deff")]) == 0
    assert out.read_bytes() == ball.read_bytes()
    h = io.read_deformation(tmp_path / "h.deff")
    assert np.array_equal(h.endpoints, img.grid.nodes())


def test_apply_grid_mismatch(ball, tmp_path, capsys):
    vpath = tmp_path / "v.velf"
    io.write_velocity(VelocityField.zeros(GridSpec((9, 8, 8))), vpath)
    rc = main(["apply", "--image", str(ball), "--velocity", str(vpath), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert error_of(capsys)["error"] == "GridMismatch"
    assert not (tmp_path / "o").exists()


def test_flow_report(tmp_path, capsys):
    g = GridSpec((12, 12, 12), spacing=(1 / 11,) * 3, nt=3)
    vpath = tmp_path / "v.velf"
    io.write_velocity(band_limited_field(g, 2, 0.05, seed=2), vpath)
    assert main(["flow", "--velocity", str(vpath), "--report", str(tmp_path / "f.json")]) == 0
    doc = io.read_json(tmp_path / "f.json")
    assert doc == json.loads(capsys.readouterr().out)
    assert doc["max_rel_error"] <= 1e-3 and doc["min_det"] > 0


def test_bad_config_key(ball, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    io.write_json(cfg, {"nstep": 3})
    rc = main(["register", "--floating", str(ball), "--target", str(ball), "--config", str(cfg),
               "--out-velocity", str(tmp_path / "v.velf")])
    assert rc == 1
    err = error_of(capsys)
    assert err["error"] == "BadConfig" and "nstep" in err["message"]


def test_truncated_input(ball, tmp_path, capsys):
    ball.write_bytes(ball.read_bytes()[:-1])
    rc = main(["apply", "--image", str(ball), "--velocity", str(ball), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert error_of(capsys)["error"] == "TruncatedPayload"


def test_missing_file(tmp_path, capsys):
    rc = main(["flow", "--velocity", str(tmp_path / "nope.velf")])
    assert rc == 1
    assert error_of(capsys)["error"] == "FileNotFoundError"


def test_verify_module_entry():
    proc = subprocess.run([sys.executable, "-m", "dtireg", "verify", "--suite", "spd3"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    lines = proc.stdout.strip().splitlines()
    assert len(lines) == 6 and all(line.startswith("PASS spd3.") for line in lines)
