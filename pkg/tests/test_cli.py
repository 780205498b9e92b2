import json
import re

import pytest

from finslerlyap.cli import CONFIG_SCHEMA, default_grid, parse_region, run


def _run(capsys, argv):
    code = run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_certify_oscillator_v2(capsys):
    code, out, _ = _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "oscillator_v2",
                                 "--region", "[-3,3]", "--mode", "ies"])
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] and "timestamp" in doc
    assert doc["report"]["verdict"] == "certified_IES"
    assert doc["report"]["rate_estimate"] == pytest.approx(0.0100, abs=5e-5)


def test_bendixson_harmonic(capsys):
    code, out, _ = _run(capsys, ["bendixson", "--system", "harmonic", "--region", "ball:2"])
    assert code == 1
    assert json.loads(out)["report"]["verdict"] == "counterexample"


def test_scenario_boost(capsys):
    code, _, _ = _run(capsys, ["scenario", "boost_lasalle"])
    assert code == 0


def test_inconclusive_exit(capsys):
    code, _, _ = _run(capsys, ["certify", "--engine", "measure", "--system", "harmonic", "--region", "ball:1"])
    assert code == 2


def test_usage_errors(capsys):
    assert run([]) == 3
    assert _run(capsys, ["certify", "--system", "nope", "--region", "[-1,1]"])[0] == 3
    assert _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "nope", "--region", "[-1,1]"])[0] == 3
    assert _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "oscillator_v1"])[0] == 3
    assert _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "oscillator_v1",
                         "--region", "[[0,1],[0,1]]"])[0] == 3
    assert _run(capsys, ["frobnicate"])[0] == 3
    assert _run(capsys, ["scenario", "lorenz"])[0] == 3
    assert _run(capsys, ["certify", "--params", "{not json"])[0] == 3
    code, _, err = _run(capsys, ["certify", "--system", "consensus", "--params", '{"A": [[-1, 2], [1, -1]]}',
                                 "--metric", "consensus_maxmin", "--region", "cube:-1,1"])
    assert code == 3 and "row" in err


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "certify", "system": "sine_oscillator", "metric": "oscillator_v1",
                               "region": "[-1.47,1.47]", "grid": 50}))
    code, out, _ = _run(capsys, ["certify", "--config", str(cfg)])
    assert code == 0
    assert json.loads(out)["report"]["details"]["plan"]["grid_per_dim"] == 50
    code, out, _ = _run(capsys, ["certify", "--config", str(cfg), "--region", "[-3,3]", "--mode", "is"])
    assert code == 1  # V1 fails beyond pi/2
    assert json.loads(out)["config"]["region"] == "[-3,3]"


def test_config_schema_violation(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": "sine_oscillator", "grid": "lots"}))
    code, _, err = _run(capsys, ["certify", "--config", str(cfg)])
    assert code == 3 and "schema" in err
    cfg.write_text(json.dumps({"colour": "blue"}))
    assert _run(capsys, ["certify", "--config", str(cfg)])[0] == 3
    cfg.write_text(json.dumps({"command": "props"}))
    assert _run(capsys, ["certify", "--config", str(cfg)])[0] == 3
    assert _run(capsys, ["certify", "--config", str(tmp_path / "missing.json")])[0] == 3


def test_byte_identical_reports(capsys):
    argv = ["certify", "--system", "kuramoto", "--params", '{"n": 3}', "--metric", "kuramoto_centroid",
            "--region", "cube:-0.7,0.7", "--grid", "4", "--random", "10", "--seed", "7"]
    outs = []
    for threads in ("1", "3"):
        _, out, _ = _run(capsys, argv + ["--threads", threads])
        outs.append(re.sub(r'"timestamp": "[^"]*"', "", out))
    assert outs[0] == outs[1]


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("FINSLER_THREADS", "x")
    code, _, _ = _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "oscillator_v1",
                               "--region", "[-1,1]"])
    assert code == 3
    monkeypatch.setenv("FINSLER_THREADS", "2")
    code, _, _ = _run(capsys, ["certify", "--system", "sine_oscillator", "--metric", "oscillator_v1",
                               "--region", "[-1,1]"])
    assert code == 0


def test_lmi_and_lasalle(capsys):
    assert _run(capsys, ["certify", "--engine", "lmi", "--system", "harmonic", "--P", "[[1,0],[0,1]]", "--Q", "1",
                         "--region", "ball:1"])[0] == 1
    assert _run(capsys, ["certify", "--engine", "lmi", "--system", "linear", "--params", '{"A": [[-1,0],[0,-1]]}',
                         "--P", "[[1,0],[0,1]]", "--Q", "[[1,0],[0,1]]", "--region", "ball:1"])[0] == 0
    code, out, _ = _run(capsys, ["lasalle", "--system", "boost_converter", "--metric", "quadratic",
                                 "--metric-params", '{"P": [[0.5,0],[0,0.5]]}', "--alpha-matrix", "[[0,0],[0,1]]",
                                 "--region", "[[0,8],[0,4]]", "--grid", "11"])
    assert code == 0
    assert json.loads(out)["report"]["verdict"] == "certified_IAS"


def test_ias_mode(capsys):
    code, out, _ = _run(capsys, ["certify", "--system", "linear", "--params", '{"A": [[-1]]}', "--metric", "quadratic",
                                 "--metric-params", '{"P": [[1]]}', "--region", "[-1,1]", "--mode", "ias"])
    assert code == 0 and json.loads(out)["report"]["verdict"] == "certified_IAS"


def test_distance_decay_props(tmp_path, capsys):
    code, out, _ = _run(capsys, ["distance", "--metric", "knorm", "--metric-params", '{"k": 1}',
                                 "--x1", "[0,0]", "--x2", "[1,2]"])
    assert code == 0 and json.loads(out)["report"]["value"] == pytest.approx(3, abs=1e-4)
    code, out, _ = _run(capsys, ["distance", "--metric", "consensus_maxmin", "--x1", "[0,0,0]", "--x2", "[1,1,1]"])
    assert code == 0 and json.loads(out)["report"]["value"] <= 1e-8
    code, out, _ = _run(capsys, ["decay", "--system", "linear", "--params", '{"A": [[-1]]}', "--metric", "quadratic",
                                 "--metric-params", '{"P": [[1]]}', "--x1", "[1]", "--x2", "[-1]", "--T", "4",
                                 "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "decay.csv").read_text().startswith("t,distance,log_distance")
    doc = json.loads((tmp_path / "decay.json").read_text())
    assert doc["report"]["rate"] == pytest.approx(1.0, rel=0.02)
    code, out, _ = _run(capsys, ["props", "--metric", "knorm", "--metric-params", '{"k": "inf"}',
                                 "--system", "linear", "--params", '{"A": [[0,0],[0,0]]}'])
    assert code == 0
    code, _, _ = _run(capsys, ["props", "--metric", "quadratic", "--metric-params", '{"P": [[2,0],[0,1]]}'])
    assert code == 0


def test_scenario_out_dir(tmp_path, capsys):
    code, out, _ = _run(capsys, ["scenario", "oscillator_v2", "--out", str(tmp_path)])
    assert code == 0
    assert out.strip().endswith("scenario.json")
    assert (tmp_path / "oscillator_v2_trajectory.csv").exists()


def test_failing_scenario_exit(capsys):
    code, _, _ = _run(capsys, ["scenario", "oscillator_v1", "--overrides", '{"edge": 1.5707963267948966, "grid": 50}'])
    assert code == 1
    assert _run(capsys, ["scenario", "oscillator_v1", "--overrides", '{"bogus": 1}'])[0] == 3


def test_region_parsing():
    r = parse_region("[-3,3]", 1)
    assert r.box == ((-3.0, 3.0),)
    assert parse_region("[-1,2]", 2).box == ((-1.0, 2.0), (-1.0, 2.0))
    assert parse_region("[[0,1],[2,3]]", 2).box == ((0.0, 1.0), (2.0, 3.0))
    assert parse_region("cube:-1,1", 3).dim == 3
    assert not parse_region("ball:1", 2).contains([0.9, 0.9])


def test_default_grid_and_schema():
    assert [default_grid(d) for d in (1, 2, 3, 5)] == [200, 21, 9, 4]
    assert CONFIG_SCHEMA["additionalProperties"] is False
