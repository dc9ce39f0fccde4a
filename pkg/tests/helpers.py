"""Small fitting routines shared by tests."""

from __future__ import annotations

import math

import torch

from ruot.nets import DTYPE, MlpSpec, mlp_init


def fit_log_gaussian(mean, std, sigma, seed=0, steps=400, width=16):
    """Regress s(x, t) onto (sigma^2 / 2) log N(x; mean, std^2 I) at sampled points."""
    mean = torch.as_tensor(mean, dtype=DTYPE)
    d = mean.numel()
    net = mlp_init(MlpSpec(d + 1, (width, width), 1), seed)
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        x = mean + 2.5 * std * torch.randn(256, d, generator=gen, dtype=DTYPE)
        logp = -0.5 * ((x - mean) ** 2).sum(1) / std**2 - 0.5 * d * math.log(2 * math.pi * std**2)
        target = 0.5 * sigma**2 * logp
        opt.zero_grad()
        loss = ((net(x, 0.0).reshape(-1) - target) ** 2).mean()
        loss.backward()
        opt.step()
    return net
