import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rcwalk import cli
from rcwalk.cli import (ConfigError, load_config, load_schema, main, parse_box, parse_grid,
                        render_csv)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SPEED = """\
[experiment]
name = t
seed = 3
d = 2
output = -

[law]
law = homogeneous

[grid]
lambdas = 0.5, 1.0

[run]
horizon = 400
replicas = 8
methods = plain
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def table(out):
    lines = [ln for ln in out.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


# ------------------------------------------------------------------ parsing

@pytest.mark.parametrize("text,expected", [
    ("0.5, 1, 2", [0.5, 1.0, 2.0]),
    ("0:1:5", [0.0, 0.25, 0.5, 0.75, 1.0]),
    ("0.2:1.2:6", [0.2, 0.4, 0.6, 0.8, 1.0, 1.2]),
    ("", []),
])
def test_parse_grid(text, expected):
    assert np.array_equal(parse_grid(text), np.array(expected))


@pytest.mark.parametrize("text", ["0:1", "a,b", "0:1:0", "1:2:x"])
def test_parse_grid_errors(text):
    with pytest.raises(ConfigError):
        parse_grid(text)


def test_parse_box():
    assert parse_box("-2,-3:4,5") == ((-2, -3), (4, 5))
    for bad in ["1,2", "3,3:1,1", "1,2:3", "a,b:c,d"]:
        with pytest.raises(ConfigError):
            parse_box(bad)


def test_load_config_and_overrides(tmp_path):
    path = write(tmp_path, SPEED)
    cfg = load_config("speed-curve", path, ["--run.replicas=5", "--grid.lambdas=0:1:3"])
    assert cfg.replicas == 5 and cfg.seed == 3 and cfg.d == 2
    assert np.array_equal(cfg.lambdas, [0.0, 0.5, 1.0])
    assert cfg.overrides == ["run.replicas=5", "grid.lambdas=0:1:3"]
    plain = load_config("speed-curve", path)
    assert plain.sha256 != cfg.sha256
    assert plain.sha256 == load_config("speed-curve", path).sha256


@pytest.mark.parametrize("override", ["run.replicas=5", "--replicas=5"])
def test_bad_override_syntax(tmp_path, override):
    with pytest.raises(ConfigError):
        load_config("speed-curve", write(tmp_path, SPEED), [override])


@pytest.mark.parametrize("command,overrides", [
    ("speed-curve", ["--grid.lambdas="]),
    ("speed-curve", ["--run.methods=magic"]),
    ("speed-curve", ["--experiment.seed=-1"]),
    ("speed-curve", ["--grid.lambdas=-1"]),
    ("speed-curve", ["--run.horizon=0"]),
    ("derivative-curve", ["--run.fd_step=0.4"]),
    ("derivative-curve", ["--run.replicas=1"]),
    ("nonmono-scan", ["--experiment.d=3"]),
    ("trap-census", []),
    ("validate-bounds", ["--run.cv_steps=31"]),
    ("coupling-diag", ["--grid.lambdas=1"]),
])
def test_validation_rejects(tmp_path, command, overrides):
    with pytest.raises(ConfigError):
        load_config(command, write(tmp_path, SPEED), overrides)


def test_super_regen_needs_elliptic_law(tmp_path):
    text = SPEED.replace("law = homogeneous", "law = two_point\np = 0.9\nkappa = 0.1")
    with pytest.raises(ConfigError):
        load_config("speed-curve", write(tmp_path, text), ["--run.methods=super-regen"])


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.ini")))
def test_shipped_configs_validate(name):
    command = {"speed": "speed-curve", "derivative": "derivative-curve", "nonmono": "nonmono-scan",
               "traps": "trap-census", "bounds": "validate-bounds", "coupling": "coupling-diag"}
    key = name.split("_")[0].split(".")[0]
    cfg = load_config(command[key], str(CONFIGS / name))
    assert cfg.law is not None and (cfg.lambdas.size >= 1 or key == "traps")


# ------------------------------------------------------------------ output

def test_schema_tables():
    s = load_schema()
    assert s["schema"] == "rcwalk-csv" and s["version"] == 1
    assert list(s["tables"]["speed_curve"]["columns"]) == ["method", "lambda", "v1_hat", "stderr", "v1_exact"]


def test_render_csv_header_and_columns(tmp_path):
    cfg = load_config("speed-curve", write(tmp_path, SPEED), ["--run.replicas=4"])
    text = render_csv(cfg, "speed_curve", [{"method": "plain", "lambda": 0.5, "v1_hat": 0.1,
                                            "stderr": float("nan"), "v1_exact": None}])
    head = [ln for ln in text.splitlines() if ln.startswith("#")]
    assert head[0].startswith("# build: ")
    assert head[1] == f"# config_sha256: {cfg.sha256}"
    assert "# seed: 3" in head and "# command: speed-curve" in head
    assert any(ln.startswith("# schema: rcwalk-csv/1 table=speed_curve") for ln in head)
    assert "# | law = homogeneous" in head and "# | override run.replicas=4" in head
    rows = table(text)
    assert rows == [{"method": "plain", "lambda": "0.5", "v1_hat": "0.1", "stderr": "", "v1_exact": ""}]


# ------------------------------------------------------------------ commands

def test_speed_curve_homogeneous(tmp_path, capsys):
    assert main(["-q", "speed-curve", write(tmp_path, SPEED)]) == 0
    rows = table(capsys.readouterr().out)
    assert [float(r["lambda"]) for r in rows] == [0.5, 1.0]
    for r in rows:
        v, se, ex = float(r["v1_hat"]), float(r["stderr"]), float(r["v1_exact"])
        assert abs(v - ex) < 5 * se + 0.02


def test_output_file_written(tmp_path):
    out = tmp_path / "sub" / "speed.csv"
    assert main(["-q", "speed-curve", write(tmp_path, SPEED), f"--experiment.output={out}"]) == 0
    assert out.exists() and "v1_hat" in out.read_text()


def test_same_seed_same_bytes(tmp_path, capsys):
    path = write(tmp_path, SPEED)
    main(["-q", "speed-curve", path])
    a = capsys.readouterr().out
    main(["-q", "speed-curve", path])
    assert capsys.readouterr().out == a
    main(["-q", "speed-curve", path, "--experiment.seed=4"])
    assert capsys.readouterr().out != a


def test_exit_code_config_errors(tmp_path, capsys):
    path = write(tmp_path, SPEED)
    assert main(["-q", "speed-curve", path, "--grid.lambdas="]) == 2
    assert main(["-q", "speed-curve", str(tmp_path / "missing.ini")]) == 2
    assert main(["-q", "speed-curve", path, "--law.law=two_point", "--law.p=0.9", "--law.kappa=0"]) == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_numerical(tmp_path, capsys):
    text = SPEED.replace("law = homogeneous", "law = uniform_elliptic\ndelta = 0.2")
    path = write(tmp_path, text)
    assert main(["-q", "speed-curve", path, "--run.methods=super-regen", "--run.horizon=3",
                 "--run.replicas=2"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_exit_code_violation(tmp_path, monkeypatch, capsys):
    path = write(tmp_path, SPEED)
    monkeypatch.setattr(cli, "validate_bounds",
                        lambda cfg: {"checks": [{"check": "fake", "passed": False}], "passed": False})
    assert main(["-q", "validate-bounds", path]) == 4
    body = json.loads(capsys.readouterr().out)
    assert body["passed"] is False and body["meta"]["command"] == "validate-bounds"


def test_derivative_curve_columns(tmp_path, capsys):
    text = SPEED.replace("methods = plain", "fd_step = 0.05")
    assert main(["-q", "derivative-curve", write(tmp_path, text)]) == 0
    rows = table(capsys.readouterr().out)
    assert list(rows[0]) == list(load_schema()["tables"]["derivative_curve"]["columns"])
    assert all(r["dv1_exact"] != "" for r in rows)


def test_trap_census_json(tmp_path, capsys):
    text = SPEED.replace("law = homogeneous", "law = two_point\np = 0.9\nkappa = 0.1") + "box = 0,0:3,3\n"
    assert main(["-q", "trap-census", write(tmp_path, text)]) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["meta"]["seed"] == 3


def test_validate_bounds_passes_small(tmp_path, capsys):
    text = (CONFIGS / "bounds.ini").read_text()
    over = ["--experiment.output=-", "--run.networks=10", "--run.exit_fields=3", "--run.cv_steps=8",
            "--run.cv_fields=1"]
    assert main(["-q", "validate-bounds", write(tmp_path, text)] + over) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["passed"] and len(body["checks"]) >= 4


def test_coupling_diag_d1(tmp_path, capsys):
    text = (CONFIGS / "coupling_d1.ini").read_text()
    over = ["--experiment.output=-", "--run.horizon=500", "--run.replicas=5", "--run.seeds=5"]
    assert main(["-q", "coupling-diag", write(tmp_path, text)] + over) == 0
    body = json.loads(capsys.readouterr().out)
    assert body["monotonicity"]["violations"] == 0


def test_console_entry_point_threads(tmp_path):
    path = write(tmp_path, SPEED)
    outs = []
    for threads in ("1", "2"):
        env = dict(os.environ, RCWALK_THREADS=threads)
        r = subprocess.run([sys.executable, "-m", "rcwalk.cli", "-q", "speed-curve", path],
                           capture_output=True, env=env, timeout=600)
        assert r.returncode == 0, r.stderr.decode()
        outs.append(r.stdout)
    assert outs[0] == outs[1]
