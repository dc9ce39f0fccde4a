import json

import pytest

from ruot.config import PRESETS, SchedulePhase, TrainConfig, load_config, preset, save_config
from ruot.errors import ConfigError


def test_training_stage_defaults():
    c = TrainConfig()
    assert (c.lambda_m, c.lambda_d, c.lambda_r, c.lambda_f, c.lambda_w, c.train_epochs) == (1e3, 1.0, 1.0, 1.0, 0.1, 10)
    assert c.schedule == [SchedulePhase(1.0, 0.1, 30), SchedulePhase(0.0, 0.1, 30)]


def test_grn_preset_schedule():
    c = preset("grn")
    assert c.schedule == [SchedulePhase(1.0, 0.1, 20), SchedulePhase(0.0, 0.1, 10)]
    assert c.sigma == 0.25 and c.dims == [0, 1]
    assert preset("gauss10d").schedule == [SchedulePhase(1.0, 0.1, 35), SchedulePhase(0.0, 0.1, 80)]
    assert set(PRESETS) == {"grn", "hematopoiesis", "gauss10d"}


@pytest.mark.parametrize(
    "kw",
    [
        dict(lambda_m=-1.0),
        dict(sigma=-0.1),
        dict(alpha=0.0),
        dict(penalty="cubic"),
        dict(train_epochs=-1),
        dict(schedule=[[1.0, 0.1, -2]]),
        dict(schedule=[[1.0, 0.1]]),
        dict(sigma=0.0),
    ],
)
def test_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_sigma_zero_allowed_without_fp_or_score():
    TrainConfig(sigma=0.0, lambda_f=0.0, pretrain_score_iters=0)


def test_dict_roundtrip_and_unknown_keys():
    c = preset("grn", seed=4)
    assert TrainConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError, match="frobnicate"):
        TrainConfig.from_dict({**c.to_dict(), "frobnicate": 1})
    with pytest.raises(ConfigError):
        preset("nope")


def test_file_precedence(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"sigma": 0.5, "optimizer": {"step_size": 0.01}}))
    c = load_config(path, preset("grn"))
    assert c.sigma == 0.5 and c.optimizer.step_size == 0.01
    assert c.optimizer.train_step_size == preset("grn").optimizer.train_step_size
    assert c.dims == [0, 1]
    save_config(c, tmp_path / "out.json")
    assert load_config(tmp_path / "out.json") == c


@pytest.mark.parametrize("content", ["{", "[]", '{"bogus": 1}', '{"optimizer": {"lr": 1}}'])
def test_bad_files(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_config(path)
