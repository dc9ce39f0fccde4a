"""Closed-form fields with the same call signature as the networks.

Used to check losses and integrators against known solutions, e.g. the
translating Gaussian ``p(x, t) = N(x; mu t, s0^2 I)`` which solves the
continuity equation for the constant velocity ``v = mu`` and zero growth.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .nets import DTYPE, as_time


class ConstantField(nn.Module):
    def __init__(self, value, dim: int):
        super().__init__()
        self.value = torch.as_tensor(value, dtype=DTYPE).reshape(-1)
        self.dim = dim

    def forward(self, x, t):
        x = torch.as_tensor(x, dtype=DTYPE)
        if x.dim() == 1:
            return self.value + 0 * x.sum()
        return self.value.expand(x.shape[0], self.value.numel()) + 0 * x.sum(-1, keepdim=True)


class LinearField(nn.Module):
    """``f(x, t) = A x + c``."""

    def __init__(self, A, c=None):
        super().__init__()
        self.A = torch.as_tensor(A, dtype=DTYPE)
        self.c = torch.zeros(self.A.shape[0], dtype=DTYPE) if c is None else torch.as_tensor(c, dtype=DTYPE)

    def forward(self, x, t):
        return torch.as_tensor(x, dtype=DTYPE) @ self.A.T + self.c


class TranslatingGaussianLogDensity(nn.Module):
    """``s(x, t) = (sigma^2 / 2) log N(x; mu t, s0^2 I)``."""

    def __init__(self, mu, s0: float, sigma: float):
        super().__init__()
        self.mu = torch.as_tensor(mu, dtype=DTYPE).reshape(-1)
        self.s0 = float(s0)
        self.sigma = float(sigma)

    def forward(self, x, t):
        x = torch.as_tensor(x, dtype=DTYPE)
        tt = as_time(t, x.shape[0])
        d = self.mu.numel()
        r = x - tt[:, None] * self.mu
        logp = -0.5 * (r**2).sum(1) / self.s0**2 - 0.5 * d * math.log(2 * math.pi * self.s0**2)
        return (0.5 * self.sigma**2 * logp).unsqueeze(1)
