import json

import pytest

from sumd._validation import ConfigurationError
from sumd.config import (
    OUTPUT_ENV, RunConfig, dump_run_config, from_dict, load_run_config, parse_override, to_dict,
)


def test_desk_preset():
    cfg = load_run_config(preset="desk")
    assert (cfg.model.stage.c_base, cfg.model.stage.c_up, cfg.model.stage.mu_iters) == (16, 8, 4)
    assert (cfg.train.iters, cfg.train.batch, cfg.train.patch) == (2000, 4, 64)
    assert cfg.data.train_dir == "builtin" and cfg.data.noise.sigma == 25.0


def test_paper_preset():
    cfg = load_run_config(preset="paper")
    assert (cfg.model.stage.c_base, cfg.model.stage.c_up, cfg.train.batch) == (128, 48, 32)


def test_overrides():
    cfg = load_run_config(preset="desk", overrides=["train.iters=10", "model.stage.body=bst"])
    assert cfg.train.iters == 10 and cfg.model.stage.body == "bst"
    assert parse_override("a.b=[1, 2]") == {"a": {"b": [1, 2]}}
    assert parse_override("data.train_dir=some/dir") == {"data": {"train_dir": "some/dir"}}


def test_stage_override_keeps_default_schedule():
    cfg = load_run_config(preset="desk", overrides=["model.stages=3"])
    assert cfg.model.patch_grid == ((4, 4), (2, 2), (1, 1))


def test_errors_name_the_field():
    with pytest.raises(ConfigurationError, match=r"model\.stage: unknown field\(s\) \['width'\]"):
        load_run_config(overrides=["model.stage.width=3"])
    with pytest.raises(ConfigurationError, match="train.*iters"):
        load_run_config(overrides=["train.iters=0"])
    with pytest.raises(ConfigurationError, match="preset"):
        load_run_config(preset="huge")
    with pytest.raises(ConfigurationError, match="key.path=value"):
        parse_override("train.iters")


def test_file_round_trip(tmp_path):
    cfg = load_run_config(preset="desk", overrides=["model.stage.mid_ratio=0.5"])
    dump_run_config(cfg, tmp_path / "c.json")
    assert load_run_config(tmp_path / "c.json") == cfg
    assert from_dict(to_dict(cfg)) == cfg


def test_bad_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigurationError, match="JSON"):
        load_run_config(tmp_path / "c.json")
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_run_config(tmp_path / "missing.json")


def test_output_dir_resolution(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(RunConfig().resolved_output_dir()) == "runs"
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
    assert str(RunConfig().resolved_output_dir()) == "/tmp/elsewhere"
    assert str(RunConfig(output_dir="x").resolved_output_dir()) == "x"


def test_dump_is_plain_json(tmp_path):
    dump_run_config(RunConfig(), tmp_path / "c.json")
    data = json.loads((tmp_path / "c.json").read_text())
    assert set(data) == {"model", "train", "data", "output_dir"}
