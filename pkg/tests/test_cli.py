import configparser
import json
import os

import pytest

from talkattack.cli import DEFAULTS, STAGES, main
from talkattack.synthetic import write_fixture


def test_config_defaults(capsys):
    assert main(["config", "--defaults"]) == 0
    out = capsys.readouterr().out
    assert out == DEFAULTS
    cfg = configparser.ConfigParser()
    cfg.read_string(out)
    assert cfg.getint("run", "seed") == 0 and cfg.get("paths", "out") == "out"


def test_missing_dependency_names_producer(tmp_path, capsys):
    paths = write_fixture(tmp_path / "fx", n=60, seed=1)
    assert main(["calibrate", "--config", paths["config"]]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "DependencyError" and err["producer"] == "tune"
    assert "model.json" in err["message"]


@pytest.mark.parametrize("section,key,value,stage", [("paths", "revisions", "nope.jsonl", "extract"),
                                                      ("run", "seed", "abc", "extract")])
def test_bad_config_value_names_key(tmp_path, capsys, section, key, value, stage):
    paths = write_fixture(tmp_path / "fx", n=60, seed=1)
    cfg = configparser.ConfigParser()
    cfg.read(paths["config"])
    cfg.set(section, key, value)
    with open(paths["config"], "w") as fh:
        cfg.write(fh)
    assert main([stage, "--config", paths["config"]]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError" and err["key"] == f"{section}.{key}"


def test_fixture_subcommand(tmp_path, capsys):
    assert main(["fixture", str(tmp_path / "fx"), "--comments", "40"]) == 0
    paths = json.loads(capsys.readouterr().out)
    assert os.path.exists(paths["config"])


@pytest.mark.slow
def test_full_pipeline_and_seed_override(tmp_path):
    paths = write_fixture(tmp_path / "fx", n=200, seed=3)
    for stage in STAGES:
        assert main([stage, "--config", paths["config"], "--threads", "2"]) == 0, stage
    out = tmp_path / "fx" / "out"
    for stage in STAGES:
        m = json.loads((out / "manifests" / f"{stage}.json").read_text())
        assert m["stage"] == stage and isinstance(m["master_seed"], int)
        assert all(len(v["sha256"]) == 64 for v in m["outputs"].values())
    for name in ("table2.txt", "table4.txt", "threshold.json", "scored.jsonl", "analysis/report.json"):
        assert (out / name).exists(), name
    th = json.loads((out / "threshold.json").read_text())
    assert 0 <= th["t"] <= 1

    other = tmp_path / "other"
    assert main(["extract", "--config", paths["config"], "--seed", "999", "--out", str(other)]) == 0
    assert json.loads((other / "manifests" / "extract.json").read_text())["master_seed"] == 999
