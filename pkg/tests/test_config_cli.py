import json
import math
from pathlib import Path

import pytest

from nerimf.cli import main
from nerimf.config import load_config, load_yaml, parse_config
from nerimf.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMIZE = """\
geometry:
  kind: disc
  resolution: 48
measure:
  atoms:
    - {alpha: 1.0, weight: 1.0}
scenario: minimize
params:
  lambda: 4pi
"""

TORUS = """\
geometry:
  kind: flat_torus
  resolution: 64
measure:
  atoms:
    - {alpha: 1.0, weight: 1.0}
scenario: mountain_pass
params:
  lambdas: [LAMS]
"""

BM = """\
geometry: {kind: disc, resolution: 32}
measure: {atoms: [{alpha: 1.0, weight: 1.0}]}
scenario: bm_probe
params: {trials: 10, eta: 0.5}
seed: 3
"""


def _write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _parse(text):
    data, lines = load_yaml(text)
    return parse_config(data, lines, "<test>")


def test_parse_pi_numbers():
    cfg = _parse(MINIMIZE)
    assert cfg.params["lambda"] == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("text,field,line", [
    (MINIMIZE.replace("resolution: 48", "resolution: four"), "geometry.resolution", 3),
    (MINIMIZE.replace("kind: disc", "kind: sphere"), "geometry.kind", 2),
    (MINIMIZE.replace("lambda: 4pi", "lambda: -1"), "params.lambda", 9),
    (MINIMIZE.replace("scenario: minimize", "scenario: dance"), "scenario", 7),
    (MINIMIZE.replace("params:\n  lambda: 4pi\n", ""), "params", None),
])
def test_parse_errors_name_field_and_line(text, field, line):
    with pytest.raises(ConfigError) as ei:
        _parse(text)
    msg = str(ei.value)
    assert f"field '{field}" in msg
    if line is not None:
        assert f"line {line}" in msg


def test_yaml_syntax_error_line():
    with pytest.raises(ConfigError, match="line"):
        load_yaml("geometry:\n  kind: [disc\n")


def test_malformed_measure_exit_1(tmp_path, capsys):
    bad = MINIMIZE.replace("weight: 1.0", "weight: 0.0")
    assert main(["run", _write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 1
    assert "measure" in capsys.readouterr().err


def test_missing_config_exit_1(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 1


def test_minimize_exit_0(tmp_path):
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, MINIMIZE), "--out", str(out)]) == 0
    res = json.loads((out / "result.json").read_text())
    assert res["passed"] and res["result"]["residual"] <= 1e-10


def test_shipped_minimize_config(tmp_path):
    assert main(["run", str(CONFIGS / "minimize_disc.yaml"), "--out", str(tmp_path), "--resolution", "32"]) == 0


def test_quantization_masses(tmp_path):
    out = tmp_path / "q"
    assert main(["run", str(CONFIGS / "quantization_disc.yaml"), "--out", str(out), "--resolution", "64"]) == 0
    rows = (out / "masses.csv").read_text().splitlines()[1:]
    assert rows
    res = json.loads((out / "result.json").read_text())
    assert all(res["result"]["checks"].values())


def test_validate_window(tmp_path, capsys):
    assert main(["validate", _write(tmp_path, TORUS.replace("LAMS", "30, 50"))]) == 0
    rep = json.loads(capsys.readouterr().out)
    lo, hi = rep["window"]
    assert lo == pytest.approx(25.13, abs=0.01) and abs(hi - 39.48) <= 0.01 * 39.48
    status = {r["lambda"]: r["status"] for r in rep["lambdas"]}
    assert status[30] == "inside" and status[50] == "above window"
    assert any("above window" in w for w in rep["warnings"])


def test_validate_calH_warning(tmp_path, capsys):
    text = """\
geometry: {kind: disc, resolution: 32}
measure: {atoms: [{alpha: 1.0, weight: 0.5}, {alpha: -0.5, weight: 0.5}]}
scenario: quantization_suite
params: {}
"""
    assert main(["validate", _write(tmp_path, text), "--out", str(tmp_path / "v")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert "calH violated; quantization not guaranteed" in rep["warnings"]
    assert (tmp_path / "v" / "validation.json").exists()


def _strip(d):
    return json.dumps(d, sort_keys=True)


def test_reproducible_result(tmp_path):
    cfg = _write(tmp_path, BM)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a)]) == 0
    assert main(["run", cfg, "--out", str(b)]) == 0
    assert (a / "result.json").read_bytes() == (b / "result.json").read_bytes()
    c = tmp_path / "c"
    main(["run", cfg, "--out", str(c), "--seed", "4"])
    assert (a / "result.json").read_bytes() != (c / "result.json").read_bytes()


def test_manifest_lists_every_file(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(CONFIGS / "continuation_disc.yaml"), "--out", str(out), "--resolution", "32"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["path"] for f in man["files"]}
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()}
    assert on_disk == listed
    assert {"config", "versions", "timings_seconds"} <= set(man)
    assert man["versions"]["numpy"] and man["versions"]["backend"] in ("cython", "python")
    assert "branch.jsonl" in listed and any(p.endswith(".csv") for p in listed)


def test_resume_continues_branch(tmp_path):
    cfg = str(CONFIGS / "continuation_disc.yaml")
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["run", cfg, "--out", str(full), "--resolution", "32"]) == 0
    assert main(["run", cfg, "--out", str(part), "--resolution", "32"]) == 0
    lines = (part / "branch.jsonl").read_text().splitlines()
    (part / "branch.jsonl").write_text("\n".join(lines[:4]) + "\n" + lines[4][:10])
    assert main(["run", cfg, "--out", str(part), "--resolution", "32", "--resume"]) == 0
    a = [json.loads(l)["lambda"] for l in (full / "branch.jsonl").read_text().splitlines()]
    b = [json.loads(l)["lambda"] for l in (part / "branch.jsonl").read_text().splitlines()]
    assert b == pytest.approx(a, rel=1e-9)


def test_load_config_file(tmp_path):
    cfg = load_config(_write(tmp_path, BM))
    assert cfg.scenario == "bm_probe" and cfg.seed == 3


def test_usage_error_exit_1(tmp_path):
    assert main(["run"]) == 1
    assert main(["frobnicate", "x.yaml"]) == 1
