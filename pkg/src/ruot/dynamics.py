"""Fixed-step integration of the probability-flow ODE and SDE sampling.

Particles follow ``dx/dt = v(x, t)`` and carry log-weights with
``d log w / dt = g(x, t)``. Gradients are obtained by backpropagating through
the unrolled steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError, UsageError
from .nets import DTYPE, as_time, scalar_grads


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ConfigError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        if int(self.steps) < 1:
            raise ConfigError(f"steps must be positive, got {self.steps}")

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    def nodes(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.steps + 1)

    @classmethod
    def for_snapshots(cls, n_times: int, steps_per_unit: int = 20) -> "TimeGrid":
        """Grid over ``[0, n_times - 1]`` so that snapshot ``k`` sits on node ``k * steps_per_unit``."""
        if n_times < 2:
            raise UsageError("need at least two snapshot times")
        return cls(0.0, float(n_times - 1), (n_times - 1) * int(steps_per_unit))

    def index_of(self, t: float) -> int:
        j = (t - self.t_start) / self.h
        k = int(round(j))
        if abs(j - k) > 1e-9 or not 0 <= k <= self.steps:
            raise UsageError(f"time {t} is not a node of the grid {self}")
        return k


@dataclass(frozen=True)
class SigmaSchedule:
    """Constant diffusion coefficient."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.value}")

    def sq(self, t=None) -> float:
        return self.value**2

    def log_sq_rate(self, t=None) -> float:
        """``(sigma^2)' / sigma^2``; identically zero for a constant schedule."""
        return 0.0


@dataclass
class Trajectory:
    times: torch.Tensor  # (S+1,)
    positions: torch.Tensor  # (S+1, N, d)
    log_weights: torch.Tensor | None = None  # (S+1, N)
    action: torch.Tensor | None = None  # (N,)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    def index_of(self, t: float) -> int:
        hits = torch.nonzero(torch.abs(self.times - t) < 1e-9)
        if hits.numel() == 0:
            raise UsageError(f"time {t} not recorded in trajectory")
        return int(hits[0, 0])

    def weights_at(self, index: int) -> torch.Tensor:
        return torch.exp(self.log_weights[index])


def _growth(g_net: nn.Module | None, x: torch.Tensor, t) -> torch.Tensor:
    if g_net is None:
        return torch.zeros(x.shape[0], dtype=DTYPE)
    return g_net(x, t).reshape(-1)


def integrate(
    v_net: nn.Module,
    g_net: nn.Module | None,
    x0,
    grid: TimeGrid,
    log_w0=None,
) -> Trajectory:
    """Classical RK4 on the coupled position / log-weight system.

    ``log_w0`` defaults to ``log(1/N)`` for ``N`` particles. States at every
    grid node are recorded; the graph is kept so losses on the result can be
    differentiated with respect to the network parameters.
    """
    x = torch.as_tensor(x0, dtype=DTYPE)
    if x.dim() != 2:
        raise ShapeError(f"particles must have shape (N, d), got {tuple(x.shape)}")
    n = x.shape[0]
    lw = (
        torch.full((n,), -math.log(n), dtype=DTYPE)
        if log_w0 is None
        else torch.as_tensor(log_w0, dtype=DTYPE).reshape(n)
    )
    h = grid.h
    nodes = grid.nodes()
    xs, lws = [x], [lw]

    def f(xx, tt):
        return v_net(xx, tt), _growth(g_net, xx, tt)

    for i in range(grid.steps):
        t = float(nodes[i])
        k1x, k1g = f(x, t)
        k2x, k2g = f(x + 0.5 * h * k1x, t + 0.5 * h)
        k3x, k3g = f(x + 0.5 * h * k2x, t + 0.5 * h)
        k4x, k4g = f(x + h * k3x, t + h)
        x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        lw = lw + (h / 6.0) * (k1g + 2 * k2g + 2 * k3g + k4g)
        if not (torch.isfinite(x).all() and torch.isfinite(lw).all()):
            raise NumericError(f"non-finite state at integration step {i + 1} (t={t + h:.6g})")
        xs.append(x)
        lws.append(lw)
    return Trajectory(
        times=torch.as_tensor(nodes, dtype=DTYPE),
        positions=torch.stack(xs),
        log_weights=torch.stack(lws),
    )


def trapezoid(values: torch.Tensor, h: float) -> torch.Tensor:
    """Trapezoid rule along dim 0 for uniformly spaced samples."""
    return h * (values.sum(0) - 0.5 * (values[0] + values[-1]))


def action_integrand(
    x: torch.Tensor,
    t: torch.Tensor,
    v_net: nn.Module,
    g_net: nn.Module | None,
    s_net: nn.Module,
    sigma: SigmaSchedule,
    alpha: float,
    penalty: Callable[[torch.Tensor], torch.Tensor],
) -> torch.Tensor:
    """Unweighted energy integrand at states ``x`` (n, d) and times ``t`` (n,)."""
    v = v_net(x, t)
    g = _growth(g_net, x, t)
    s, grad_s, _ = scalar_grads(s_net, x, t, create_graph=True)
    return (
        0.5 * (v**2).sum(1)
        + 0.5 * (grad_s**2).sum(1)
        - (0.5 * sigma.sq() + s) * g
        - sigma.log_sq_rate() * s
        + alpha * penalty(g)
    )


def accumulate_action(
    traj: Trajectory,
    v_net: nn.Module,
    g_net: nn.Module | None,
    s_net: nn.Module,
    sigma: SigmaSchedule,
    alpha: float,
    penalty: Callable[[torch.Tensor], torch.Tensor],
) -> torch.Tensor:
    """Monte-Carlo estimate of the weighted energy.

    Mean over particles of the trapezoid integral of the integrand times
    ``w(t) = exp(log w(t) - log w(0))``. The per-particle integrals are stored
    in ``traj.action``.
    """
    if traj.log_weights is None:
        raise UsageError("trajectory carries no log-weights; produce it with integrate()")
    steps = traj.times.shape[0] - 1
    if steps < 1:
        raise UsageError("trajectory needs at least two recorded times")
    h = float(traj.times[1] - traj.times[0])
    if not torch.allclose(traj.times[1:] - traj.times[:-1], torch.full((steps,), h, dtype=DTYPE)):
        raise UsageError("trajectory times are not uniformly spaced")
    S1, N, d = traj.positions.shape
    x = traj.positions.reshape(S1 * N, d)
    t = traj.times.repeat_interleave(N)
    integrand = action_integrand(x, t, v_net, g_net, s_net, sigma, alpha, penalty).reshape(S1, N)
    w = torch.exp(traj.log_weights - traj.log_weights[0])
    per_particle = trapezoid(integrand * w, h)
    traj.action = per_particle
    return per_particle.mean()


def sde_drift(v_net: nn.Module, s_net: nn.Module, x: torch.Tensor, t: float, score_scale: float = 1.0) -> torch.Tensor:
    """``b = v + (sigma^2/2) grad log p = v + score_scale * grad s``.

    ``score_scale`` is ``sigma^2 / sigma_train^2`` when sampling at a noise
    level other than the one ``s`` was trained with (1 otherwise).
    """
    tt = as_time(t, x.shape[0])
    _, grad_s, _ = scalar_grads(s_net, x.detach(), tt.detach(), create_graph=False)
    with torch.no_grad():
        return v_net(x, tt) + score_scale * grad_s


def sample_sde(
    v_net: nn.Module,
    s_net: nn.Module,
    sigma: SigmaSchedule,
    x0,
    grid: TimeGrid,
    seed: int,
    train_sigma: float | None = None,
) -> Trajectory:
    """Euler-Maruyama paths of ``dX = (v + (sigma^2 / train_sigma^2) grad s) dt + sigma dW``.

    ``train_sigma`` defaults to ``sigma``. Every such SDE has the marginals of
    the flow ``v`` when ``s`` is exact. Deterministic for a fixed seed; the
    result carries positions only.
    """
    x = torch.as_tensor(x0, dtype=DTYPE).detach().clone()
    if x.dim() != 2:
        raise ShapeError(f"particles must have shape (N, d), got {tuple(x.shape)}")
    gen = torch.Generator().manual_seed(int(seed))
    h = grid.h
    nodes = grid.nodes()
    scale = sigma.value * math.sqrt(h)
    if train_sigma is None or train_sigma == sigma.value:
        score_scale = 1.0
    elif train_sigma > 0:
        score_scale = sigma.sq() / train_sigma**2
    else:
        raise ConfigError("train_sigma must be positive")
    xs = [x]
    for i in range(grid.steps):
        b = sde_drift(v_net, s_net, x, float(nodes[i]), score_scale)
        noise = torch.randn(x.shape, generator=gen, dtype=DTYPE)
        x = x + h * b + scale * noise
        if not torch.isfinite(x).all():
            raise NumericError(f"non-finite state at SDE step {i + 1} (t={nodes[i + 1]:.6g})")
        xs.append(x)
    return Trajectory(times=torch.as_tensor(nodes, dtype=DTYPE), positions=torch.stack(xs))
