import json

import numpy as np
import pytest
import torch

from ruot.config import TrainConfig
from ruot.errors import FormatError, UsageError
from ruot.nets import get_flat_params
from ruot.synthdata import SnapshotDataset
from ruot.training import (
    Checkpoint,
    bridge_pairs_sampler,
    checkpoint_to_json,
    generated_snapshots,
    init_fields,
    load_checkpoint,
    pretrain_recon,
    pretrain_score,
    run_pipeline,
    save_checkpoint,
    train_full,
)


def toy_data(seed=0):
    rng = np.random.default_rng(seed)
    return SnapshotDataset(
        [0, 1, 2],
        [rng.normal(size=(20, 2)), rng.normal(size=(24, 2)) + [1.0, 0.0], rng.normal(size=(30, 2)) + [2.0, 0.0]],
    )


def tiny_cfg(**kw):
    base = dict(
        hidden_layers=[8, 8],
        schedule=[[1.0, 0.1, 1], [0.0, 0.1, 1]],
        steps_per_epoch=2,
        pretrain_score_iters=3,
        stability_alpha=1.0,
        stability_iters=2,
        score_batch=16,
        train_epochs=1,
        steps_per_unit_time=2,
        batch_size=10,
        collocation_max=64,
    )
    base.update(kw)
    return TrainConfig(**base)


def flat(fields):
    return [get_flat_params(m) for m in fields.modules()]


def test_zero_epochs_leave_initialization_unchanged():
    cfg = tiny_cfg(schedule=[[1.0, 0.1, 0]], pretrain_score_iters=0, stability_iters=0, train_epochs=0)
    data = toy_data()
    fields = run_pipeline(data, cfg)
    ref = init_fields(2, cfg)
    assert all(torch.equal(a, b) for a, b in zip(flat(fields), flat(ref)))


def test_stages_touch_only_their_networks():
    data, cfg = toy_data(), tiny_cfg()
    fields = init_fields(2, cfg)
    v0, g0, s0 = flat(fields)
    pretrain_recon(data, fields, cfg)
    v1, g1, s1 = flat(fields)
    assert not torch.equal(v0, v1) and not torch.equal(g0, g1) and torch.equal(s0, s1)
    pretrain_score(data, fields, cfg)
    v2, g2, s2 = flat(fields)
    assert torch.equal(v1, v2) and torch.equal(g1, g2) and not torch.equal(s1, s2)
    train_full(data, fields, cfg)
    v3, g3, s3 = flat(fields)
    assert not torch.equal(v2, v3) and not torch.equal(g2, g3) and not torch.equal(s2, s3)


def test_pipeline_is_deterministic():
    data, cfg = toy_data(), tiny_cfg()
    a = flat(run_pipeline(data, cfg))
    b = flat(run_pipeline(data, cfg))
    c = flat(run_pipeline(data, cfg.replace(seed=1)))
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert not all(torch.equal(x, y) for x, y in zip(a, c))


def test_callbacks_and_stage_hooks():
    data, cfg = toy_data(), tiny_cfg()
    recs, stages = [], []
    run_pipeline(data, cfg, callback=recs.append, stage_done=lambda s, f: stages.append(s))
    assert stages == ["init", "pretrain_recon", "pretrain_score", "train"]
    assert [r["epoch"] for r in recs if r["stage"] == "pretrain_recon"] == [1, 2]
    train = [r for r in recs if r["stage"] == "train"]
    assert len(train) == 1 and {"energy", "recon", "fp", "total"} <= set(train[0])
    assert all(np.isfinite(r["loss"]) for r in recs if "loss" in r)


def test_projection_dims():
    data = toy_data()
    cfg = tiny_cfg(dims=[1], schedule=[[1.0, 0.1, 0]], pretrain_score_iters=0, stability_iters=0, train_epochs=0)
    fields = run_pipeline(data, cfg)
    assert fields.v.spec.state_dim == 1


def test_generated_snapshots_and_bridges():
    data, cfg = toy_data(), tiny_cfg()
    fields = init_fields(2, cfg)
    clouds = generated_snapshots(data, fields, cfg)
    assert len(clouds) == 3 and all(len(c) == 20 for c in clouds)
    assert np.allclose(clouds[0].points, data.clouds[0])
    pairs = bridge_pairs_sampler(data, fields, cfg)(5)
    assert len(pairs) == 16
    assert set(pairs.t0.tolist()) == {0.0, 1.0} and set(pairs.t1.tolist()) == {1.0, 2.0}


def test_single_snapshot_rejected():
    data = SnapshotDataset([0], [np.zeros((3, 2))])
    with pytest.raises(UsageError):
        pretrain_recon(data, init_fields(2, tiny_cfg()), tiny_cfg())


def test_checkpoint_roundtrip(tmp_path):
    cfg = tiny_cfg()
    fields = init_fields(2, cfg)
    path = tmp_path / "ck.json"
    save_checkpoint(path, Checkpoint(fields, cfg, "train", 3, meta={"note": "x"}))
    back = load_checkpoint(path)
    assert back.stage == "train" and back.epoch == 3 and back.meta == {"note": "x"}
    assert back.config == cfg
    assert all(torch.equal(a, b) for a, b in zip(flat(fields), flat(back.fields)))
    x = torch.randn(4, 2, dtype=torch.float64)
    assert torch.equal(fields.v(x, 0.3), back.fields.v(x, 0.3))
    # serialization is a pure function of the contents
    assert checkpoint_to_json(back) == path.read_text()


def test_checkpoint_corruption(tmp_path):
    cfg = tiny_cfg()
    path = tmp_path / "ck.json"
    save_checkpoint(path, Checkpoint(init_fields(2, cfg), cfg))
    text = path.read_text()
    bad = tmp_path / "trunc.json"
    bad.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    doc = json.loads(text)
    doc["version"] = 99
    bad.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(bad)
    doc["version"] = 1
    doc["nets"]["v"]["params"]["layers.0.weight"]["shape"] = [1, 1]
    bad.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(FormatError):
        load_checkpoint(bad)
