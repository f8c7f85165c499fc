import json

import pytest

from physair.cli import run
from physair.config import load_config, parse_config


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand():
    assert run([]) == 1


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as info:
        run(["--help"])
    assert info.value.code == 0
    assert "paths.stations" in capsys.readouterr().out


def test_malformed_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text('{\n  "model": {"H": 24,}\n}')
    assert run(["train", "--config", str(p)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_rejected():
    with pytest.raises(Exception, match="unknown key"):
        parse_config({"model": {"H": 24, "hidden": 3}})
    with pytest.raises(Exception, match="unknown key"):
        parse_config({"modle": {}})


def test_availability_h_shorthand():
    cfg = parse_config(
        {
            "model": {"H": 48},
            "features": [
                {"name": "pm10", "is_target": True},
                {"name": "ws", "availability": "H", "wind_component": "speed", "role": "meteorology_forecast"},
                {"name": "wd", "availability": "H", "wind_component": "direction", "role": "meteorology_forecast"},
            ],
            "data": {"calendar": True},
        }
    )
    assert cfg.L == 72 and [f.availability for f in cfg.features] == [0, 48, 48, 48, 48, 48, 48]


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--seed", "1"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def _pipeline(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--preset", "grid9", "--seed", "7", "--hours", "900", "--out", str(out)]) == 0
    cfg = json.loads((out / "run_config.json").read_text())
    cfg["train"]["max_epochs"] = 1
    (out / "run_config.json").write_text(json.dumps(cfg))
    return out


def test_end_to_end_and_idempotent(tmp_path):
    out = _pipeline(tmp_path)
    conf = str(out / "run_config.json")
    assert run(["train", "--config", conf, "--init-only", "--out", str(out / "init")]) == 0
    assert run(["eval", "--config", conf, "--checkpoint", str(out / "init" / "checkpoint.json"), "--out", str(out / "init")]) == 0
    rows = json.loads((out / "init" / "metrics.json").read_text())["rows"]
    assert rows[0]["MAE"] > 0 and rows[0]["MSE"] > 0
    assert [r["horizon"] for r in rows] == ["24", "48", "72", "AVG"]

    inputs_before = (out / "series.csv").read_bytes()
    d = out / "run"
    names = ("checkpoint.json", "history.csv", "forecast.csv", "attribution.json", "g4_spatial.svg")
    snapshots = []
    for _ in range(2):
        assert run(["train", "--config", conf, "--out", str(d)]) == 0
        ck = str(d / "checkpoint.json")
        assert run(["predict", "--config", conf, "--checkpoint", ck, "--out", str(d)]) == 0
        assert run(["attribute", "--config", conf, "--checkpoint", ck, "--out", str(d)]) == 0
        snapshots.append({n: (d / n).read_bytes() for n in names})
    for n in names:
        assert snapshots[0][n] == snapshots[1][n], n
    assert (out / "series.csv").read_bytes() == inputs_before
    header = (d / "forecast.csv").read_text().splitlines()[0]
    assert header == "timestamp,station_id,horizon_hour,yhat,y_if_known"


def test_simulate_requires_preset(tmp_path):
    assert run(["simulate", "--out", str(tmp_path)]) == 1


def test_missing_paths(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"features": [{"name": "pm10", "is_target": True}], "flags": {"transport": False}}))
    assert run(["train", "--config", str(p)]) == 1
