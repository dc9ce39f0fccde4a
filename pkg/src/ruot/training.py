"""The two-stage training procedure and checkpoints.

Pre-training fits the velocity and growth networks to the snapshots with the
reconstruction loss (under a ``(lambda_m, lambda_d, epochs)`` schedule), then
fits the log-density network by score matching on Brownian bridges between
OT-paired generated snapshots. The training stage minimizes the full objective
over all three networks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .config import TrainConfig
from .density import fit_kde
from .dynamics import SigmaSchedule, TimeGrid, integrate
from .errors import ConfigError, FormatError, UsageError
from .losses import GrowthPenalty, BridgePairs, cfm_score_loss, recon_loss, total_loss
from .nets import DTYPE, FieldSet, Mlp, MlpSpec, build_fields
from .synthdata import SnapshotDataset, atomic_write_text
from .transport import WeightedCloud, sample_pairs, wasserstein

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ruot-checkpoint"
CHECKPOINT_VERSION = 1

History = list[dict]


def init_fields(dim: int, cfg: TrainConfig) -> FieldSet:
    growth_output = GrowthPenalty(cfg.penalty, cfg.alpha).growth_output
    return build_fields(dim, cfg.seed, cfg.hidden_layers, cfg.activation, growth_output)


def snapshot_grid(data: SnapshotDataset, steps_per_unit: int) -> TimeGrid:
    if len(data.times) < 2:
        raise UsageError("need at least two snapshot times")
    t0, t1 = data.times[0], data.times[-1]
    return TimeGrid(float(t0), float(t1), (t1 - t0) * steps_per_unit)


class _Seeds:
    """Expands the master seed into independent per-stage, per-step integer seeds."""

    def __init__(self, seed: int, stage: str):
        tag = sum(ord(c) * 31**i for i, c in enumerate(stage)) % (2**31)
        self._ss = np.random.SeedSequence([int(seed), tag])
        self.rng = np.random.default_rng(self._ss)

    def next(self) -> int:
        return int(self.rng.integers(0, 2**31 - 1))


def _initial_batch(data: SnapshotDataset, cfg: TrainConfig, rng: np.random.Generator) -> torch.Tensor:
    x0 = data.clouds[0]
    n = x0.shape[0]
    if cfg.batch_size == 0 or cfg.batch_size >= n:
        return torch.as_tensor(x0, dtype=DTYPE)
    idx = rng.choice(n, size=cfg.batch_size, replace=True)
    return torch.as_tensor(x0[idx], dtype=DTYPE)


def _adam(params, cfg: TrainConfig, lr: float) -> torch.optim.Optimizer:
    o = cfg.optimizer
    return torch.optim.Adam(params, lr=lr, betas=(o.beta1, o.beta2), eps=o.epsilon)


def _params(*nets) -> list[torch.nn.Parameter]:
    return [p for net in nets if net is not None for p in net.parameters()]


def pretrain_recon(
    data: SnapshotDataset,
    fields: FieldSet,
    cfg: TrainConfig,
    callback: Callable[[dict], None] | None = None,
) -> FieldSet:
    """Fit velocity and growth to the snapshots with the scheduled reconstruction loss."""
    if len(data.times) < 2:
        raise UsageError("pre-training needs at least two snapshot times")
    if sum(p.epochs for p in cfg.schedule) == 0 or cfg.steps_per_epoch == 0:
        return fields
    grid = snapshot_grid(data, cfg.steps_per_unit_time)
    seeds = _Seeds(cfg.seed, "recon")
    opt = _adam(_params(fields.v, fields.g), cfg, cfg.optimizer.step_size)
    n0 = data.counts[0]
    epoch = 0
    for phase_no, phase in enumerate(cfg.schedule):
        for _ in range(phase.epochs):
            losses = []
            for _ in range(cfg.steps_per_epoch):
                x0 = _initial_batch(data, cfg, seeds.rng)
                opt.zero_grad()
                traj = integrate(fields.v, fields.g, x0, grid)
                loss = recon_loss(data, traj, phase.lambda_m, phase.lambda_d, n0)
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
            epoch += 1
            rec = {"stage": "pretrain_recon", "phase": phase_no, "epoch": epoch, "loss": float(np.mean(losses))}
            log.info("pretrain_recon phase %d epoch %d loss %.6g", phase_no, epoch, rec["loss"])
            if callback:
                callback(rec)
    return fields


def generated_snapshots(data: SnapshotDataset, fields: FieldSet, cfg: TrainConfig):
    """Push all initial points through the learned flow; returns per-snapshot weighted clouds."""
    grid = snapshot_grid(data, cfg.steps_per_unit_time)
    with torch.no_grad():
        traj = integrate(fields.v, fields.g, data.clouds[0], grid)
    out = []
    for t in data.times:
        j = traj.index_of(float(t))
        out.append(WeightedCloud(traj.positions[j].numpy(), traj.weights_at(j).numpy()))
    return out


def bridge_pairs_sampler(data: SnapshotDataset, fields: FieldSet, cfg: TrainConfig):
    """OT plans between consecutive generated snapshots; returns a function ``seed -> BridgePairs``."""
    clouds = generated_snapshots(data, fields, cfg)
    plans = [wasserstein(a, b, order=2)[1] for a, b in zip(clouds[:-1], clouds[1:])]
    per_interval = max(1, cfg.score_batch // len(plans))

    def draw(seed: int) -> BridgePairs:
        parts = []
        for k, plan in enumerate(plans):
            x0, x1 = sample_pairs(plan, clouds[k], clouds[k + 1], per_interval, seed + k)
            parts.append(BridgePairs(x0, x1, float(data.times[k]), float(data.times[k + 1])))
        return BridgePairs.concat(parts)

    return draw


def pretrain_score(
    data: SnapshotDataset,
    fields: FieldSet,
    cfg: TrainConfig,
    callback: Callable[[dict], None] | None = None,
) -> FieldSet:
    """Fit the log-density network by conditional flow matching with velocity and growth frozen.

    An optional stability phase (``stability_iters`` steps with the positivity
    penalty) runs first.
    """
    if cfg.pretrain_score_iters == 0 and cfg.stability_iters == 0:
        return fields
    if not cfg.sigma > 0:
        raise ConfigError("score matching needs sigma > 0")
    sigma = SigmaSchedule(cfg.sigma)
    draw = bridge_pairs_sampler(data, fields, cfg)
    seeds = _Seeds(cfg.seed, "score")
    opt = _adam(fields.s.parameters(), cfg, cfg.optimizer.step_size)
    phases = [("stability", cfg.stability_iters, cfg.stability_alpha), ("score", cfg.pretrain_score_iters, 0.0)]
    for name, iters, pen in phases:
        if pen == 0.0 and name == "stability":
            continue
        for it in range(iters):
            pairs = draw(seeds.next())
            opt.zero_grad()
            loss = cfm_score_loss(fields.s, pairs, sigma, 1, seeds.next(), pen)
            loss.backward()
            opt.step()
            if callback and (it + 1) % 100 == 0:
                callback({"stage": f"pretrain_{name}", "iter": it + 1, "loss": float(loss.detach())})
    return fields


def train_full(
    data: SnapshotDataset,
    fields: FieldSet,
    cfg: TrainConfig,
    callback: Callable[[dict], None] | None = None,
) -> FieldSet:
    """Minimize energy + reconstruction + Fokker-Planck over all three networks."""
    if cfg.train_epochs == 0 or cfg.steps_per_epoch == 0:
        return fields
    grid = snapshot_grid(data, cfg.steps_per_unit_time)
    seeds = _Seeds(cfg.seed, "train")
    opt = _adam(_params(*fields.modules()), cfg, cfg.optimizer.train_step_size)
    bandwidth = cfg.kde_bandwidth if cfg.kde_bandwidth is not None else cfg.sigma
    n0 = data.counts[0]
    for epoch in range(1, cfg.train_epochs + 1):
        p0 = fit_kde(data.clouds[0], bandwidth, cfg.kde_normalization)
        parts_acc = []
        for _ in range(cfg.steps_per_epoch):
            x0 = _initial_batch(data, cfg, seeds.rng)
            opt.zero_grad()
            traj = integrate(fields.v, fields.g, x0, grid)
            loss, parts = total_loss(fields, data, traj, cfg, p0, seeds.next(), n0)
            loss.backward()
            opt.step()
            parts_acc.append(parts)
        rec = {"stage": "train", "epoch": epoch}
        rec.update({k: float(np.mean([p[k] for p in parts_acc])) for k in parts_acc[0]})
        log.info("train epoch %d %s", epoch, rec)
        if callback:
            callback(rec)
    return fields


def run_pipeline(
    data: SnapshotDataset,
    cfg: TrainConfig,
    fields: FieldSet | None = None,
    callback: Callable[[dict], None] | None = None,
    stage_done: Callable[[str, FieldSet], None] | None = None,
) -> FieldSet:
    """All stages in order; ``stage_done(stage, fields)`` fires after each (e.g. to checkpoint)."""
    if cfg.dims is not None:
        data = data.project(cfg.dims)
    fields = fields or init_fields(data.dim, cfg)
    if stage_done:
        stage_done("init", fields)
    for name, fn in (("pretrain_recon", pretrain_recon), ("pretrain_score", pretrain_score), ("train", train_full)):
        fn(data, fields, cfg, callback)
        if stage_done:
            stage_done(name, fields)
    return fields


# ----------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    fields: FieldSet
    config: TrainConfig
    stage: str = "init"
    epoch: int = 0
    version: int = CHECKPOINT_VERSION
    meta: dict = field(default_factory=dict)


def _net_to_json(net: Mlp | None):
    if net is None:
        return None
    params = {
        name: {"shape": list(p.shape), "data": p.detach().reshape(-1).tolist()}
        for name, p in net.state_dict().items()
    }
    return {"spec": net.spec.to_dict(), "params": params}


def _net_from_json(d) -> Mlp | None:
    if d is None:
        return None
    net = Mlp(MlpSpec.from_dict(d["spec"]))
    state = {}
    for name, entry in d["params"].items():
        t = torch.tensor(entry["data"], dtype=DTYPE)
        state[name] = t.reshape(entry["shape"])
    net.load_state_dict(state, strict=True)
    return net


def checkpoint_to_json(ckpt: Checkpoint) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": ckpt.version,
        "stage": ckpt.stage,
        "epoch": ckpt.epoch,
        "config": ckpt.config.to_dict(),
        "nets": {k: _net_to_json(getattr(ckpt.fields, k)) for k in ("v", "g", "s")},
        "meta": ckpt.meta,
    }
    return json.dumps(doc, indent=1) + "\n"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_text(path, checkpoint_to_json(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        nets = {k: _net_from_json(doc["nets"][k]) for k in ("v", "g", "s")}
        cfg = TrainConfig.from_dict(doc["config"])
        return Checkpoint(
            FieldSet(nets["v"], nets["g"], nets["s"]),
            cfg,
            doc["stage"],
            int(doc["epoch"]),
            doc["version"],
            doc.get("meta", {}),
        )
    except (KeyError, TypeError, RuntimeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
