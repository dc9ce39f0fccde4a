"""Finite-difference gradient checks of every loss on tiny random problems."""

from __future__ import annotations

import numpy as np
import torch

from oracles import central_difference
from ruot.config import TrainConfig
from ruot.density import fit_kde
from ruot.dynamics import SigmaSchedule, TimeGrid, accumulate_action, integrate
from ruot.losses import (
    BridgePairs,
    GrowthPenalty,
    cfm_score_loss,
    collocation_points,
    fp_residual_loss,
    recon_loss,
    total_loss,
)
from ruot.nets import DTYPE, MlpSpec, get_flat_params, grad_params, mlp_init, set_flat_params
from ruot.nets import FieldSet
from ruot.synthdata import SnapshotDataset

LOSSES = ("energy", "recon", "fp", "cfm", "total")


def tiny_problem(seed: int):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    width = int(rng.integers(2, 5))
    act = ["tanh", "softplus", "silu"][seed % 3]
    v = mlp_init(MlpSpec(d + 1, (width,), d, act), seed)
    g = mlp_init(MlpSpec(d + 1, (width,), 1, act), seed + 1)
    s = mlp_init(MlpSpec(d + 1, (width,), 1, act), seed + 2)
    with torch.no_grad():
        s.layers[-1].bias.fill_(-1.0)
    counts = rng.integers(3, 7, size=3)
    clouds = [rng.normal(size=(int(n), d)) + k * 0.5 for k, n in enumerate(counts)]
    data = SnapshotDataset([0, 1, 2], clouds)
    cfg = TrainConfig(
        sigma=float(rng.uniform(0.6, 1.2)),
        alpha=float(rng.uniform(0.5, 2.0)),
        lambda_m=float(rng.uniform(0.5, 5.0)),
        lambda_d=float(rng.uniform(0.1, 1.0)),
        lambda_w=0.1,
        collocation_max=None,
    )
    return FieldSet(v, g, s), data, cfg


def loss_closure(name: str, fields: FieldSet, data: SnapshotDataset, cfg: TrainConfig, seed: int):
    grid = TimeGrid(0.0, 2.0, 2)
    x0 = torch.as_tensor(data.clouds[0], dtype=DTYPE)
    sigma = SigmaSchedule(cfg.sigma)
    pen = GrowthPenalty(cfg.penalty, cfg.alpha)
    p0 = fit_kde(data.clouds[0], cfg.sigma)
    rng = np.random.default_rng(seed + 7)
    pairs = BridgePairs(rng.normal(size=(6, data.dim)), rng.normal(size=(6, data.dim)) + 1.0, 0.0, 1.0)
    fixed = integrate(fields.v, fields.g, x0, grid)
    x_col, t_col = collocation_points(fixed, seed)

    def f():
        if name == "cfm":
            return cfm_score_loss(fields.s, pairs, sigma, 2, seed, stability_alpha=0.5)
        if name == "fp":
            return fp_residual_loss(fields.v, fields.g, fields.s, sigma, x_col, t_col, p0, cfg.lambda_w, data.clouds[0], 0.0)
        traj = integrate(fields.v, fields.g, x0, grid)
        if name == "energy":
            return accumulate_action(traj, fields.v, fields.g, fields.s, sigma, cfg.alpha, pen)
        if name == "recon":
            return recon_loss(data, traj, cfg.lambda_m, cfg.lambda_d)
        return total_loss(fields, data, traj, cfg, p0, seed, collocation=(x_col, t_col))[0]

    return f


def relative_gradient_error(name: str, seed: int) -> float:
    fields, data, cfg = tiny_problem(seed)
    nets = fields.modules()
    f = loss_closure(name, fields, data, cfg, seed)
    exact = torch.cat([torch.cat([g.reshape(-1) for g in gd.values()]) for gd in grad_params(f, nets)]).numpy()
    sizes = [get_flat_params(n).numel() for n in nets]
    theta0 = torch.cat([get_flat_params(n) for n in nets]).numpy()

    def value(theta):
        for net, part in zip(nets, np.split(theta, np.cumsum(sizes)[:-1])):
            set_flat_params(net, torch.as_tensor(part))
        with torch.enable_grad():
            return float(f().detach())

    fd = central_difference(value, theta0, eps=1e-6)
    value(theta0)
    scale = max(np.linalg.norm(exact), np.linalg.norm(fd), 1e-8)
    return float(np.linalg.norm(exact - fd) / scale)
