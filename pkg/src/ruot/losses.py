"""Training objectives.

All losses return scalar float64 tensors attached to the autograd graph of the
networks that produced their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import torch
from torch import nn

from .density import Density, density_eval_torch
from .dynamics import SigmaSchedule, Trajectory, accumulate_action, _growth
from .errors import ConfigError, DomainError, ShapeError, UsageError
from .nets import DTYPE, divergence, scalar_grads
from .transport import cost_matrix, solve_ot

if TYPE_CHECKING:
    from .config import TrainConfig
    from .nets import FieldSet
    from .synthdata import SnapshotDataset

PENALTY_KINDS = ("quadratic", "death_only", "birth_only", "symmetric_branching")


@dataclass(frozen=True)
class GrowthPenalty:
    """Convex cost ``Psi`` on the growth rate, weighted by ``alpha`` in the energy."""

    kind: str = "quadratic"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigError(f"unknown growth penalty {self.kind!r}; choose from {PENALTY_KINDS}")
        if not self.alpha > 0:
            raise ConfigError(f"penalty weight alpha must be positive, got {self.alpha}")

    @property
    def growth_output(self) -> str:
        """Output map for a growth network so its values stay in this penalty's domain."""
        return {"death_only": "neg_softplus", "birth_only": "softplus"}.get(self.kind, "identity")

    def psi(self, g: torch.Tensor) -> torch.Tensor:
        g = torch.as_tensor(g, dtype=DTYPE)
        if self.kind == "quadratic":
            return g**2
        if self.kind == "death_only":
            if (g > 0).any():
                raise DomainError("death_only penalty is defined for g <= 0 only")
            # 1 + g - g log(-g), with the g -> 0 limit equal to 1
            return 1 + g + torch.xlogy(-g, -g)
        if self.kind == "birth_only":
            if (g < 0).any():
                raise DomainError("birth_only penalty is defined for g >= 0 only")
            return 1 - g + torch.xlogy(g, g)
        # sup_s [g s - (cosh s - 1)] is attained at s = asinh(g)
        return g * torch.asinh(g) - torch.sqrt(1 + g**2) + 1

    __call__ = psi


def growth_penalty_eval(pen: GrowthPenalty, g: float) -> float:
    return float(pen.psi(torch.tensor(float(g), dtype=DTYPE)))


@dataclass
class MassAssignment:
    nearest: np.ndarray  # (N_k,) index of the nearest particle for every data point
    counts: np.ndarray  # (N,) number of data points assigned to each particle


def nearest_assignment(real_points, particles) -> MassAssignment:
    """Map each data point to its nearest particle (squared Euclidean, ties to the lowest index)."""
    real = np.asarray(torch.as_tensor(real_points, dtype=DTYPE).detach())
    part = np.asarray(torch.as_tensor(particles, dtype=DTYPE).detach())
    if real.shape[0] == 0 or part.shape[0] == 0:
        raise UsageError("mass matching needs nonempty data and particle sets")
    if real.shape[1] != part.shape[1]:
        raise ShapeError(f"dimension mismatch: data {real.shape[1]} vs particles {part.shape[1]}")
    nearest = cost_matrix(real, part, 2).argmin(axis=1)
    counts = np.bincount(nearest, minlength=part.shape[0])
    return MassAssignment(nearest, counts)


def mass_matching_loss(real_points, particles, weights: torch.Tensor, n0: int | None = None) -> torch.Tensor:
    """``M_k = sum_i (w_i - card(h^-1(i)) / N0)^2``.

    ``weights`` are the unnormalized particle weights at this time; ``n0`` is
    the number of data points at the initial time (defaults to the particle
    count, the usual case when all initial points are integrated).
    """
    weights = torch.as_tensor(weights, dtype=DTYPE).reshape(-1)
    assign = nearest_assignment(real_points, particles)
    if weights.shape[0] != assign.counts.shape[0]:
        raise ShapeError(f"{weights.shape[0]} weights for {assign.counts.shape[0]} particles")
    n0 = weights.shape[0] if n0 is None else n0
    target = torch.as_tensor(assign.counts, dtype=DTYPE) / n0
    return ((weights - target) ** 2).sum()


def _sqrt_or_zero(x: torch.Tensor) -> torch.Tensor:
    return torch.sqrt(x) if float(x.detach()) > 0 else x * 0


def weighted_ot_loss(particles: torch.Tensor, weights: torch.Tensor, real_points, order: int = 2) -> torch.Tensor:
    """Exact ``W_order`` between normalized particle weights and uniform data.

    Differentiable through the fixed optimal plan: positions get the plan's
    gradient, weights get the centred dual potential of their marginal.
    """
    real = torch.as_tensor(real_points, dtype=DTYPE).detach()
    x = particles
    a = weights / weights.sum()
    if order == 2:
        C = ((x[:, None, :] - real[None, :, :]) ** 2).sum(-1)
    else:
        C = torch.sqrt(((x[:, None, :] - real[None, :, :]) ** 2).sum(-1) + 1e-300)
    b = np.full(real.shape[0], 1.0 / real.shape[0])
    plan, u, _ = solve_ot(a.detach().numpy().astype(np.float64), b, C.detach().numpy())
    u = torch.as_tensor(u - u.mean(), dtype=DTYPE)
    cost = (torch.as_tensor(plan, dtype=DTYPE) * C).sum() + (u * (a - a.detach())).sum()
    return cost if order == 1 else _sqrt_or_zero(cost)


def snapshot_time(dataset: "SnapshotDataset", k: int) -> float:
    return float(dataset.times[k])


def recon_loss(
    dataset: "SnapshotDataset",
    traj: Trajectory,
    lambda_m: float,
    lambda_d: float,
    n0: int | None = None,
) -> torch.Tensor:
    """``lambda_m * sum_k M_k + lambda_d * sum_k W2_k`` over snapshots ``k >= 1``."""
    total = torch.zeros((), dtype=DTYPE)
    if lambda_m == 0 and lambda_d == 0:
        return total
    if traj.log_weights is None:
        raise UsageError("reconstruction needs a trajectory with log-weights")
    n0 = dataset.counts[0] if n0 is None else n0
    for k in range(1, len(dataset.times)):
        j = traj.index_of(snapshot_time(dataset, k))
        pos = traj.positions[j]
        w = traj.weights_at(j)
        real = dataset.clouds[k]
        if lambda_m:
            total = total + lambda_m * mass_matching_loss(real, pos, w, n0)
        if lambda_d:
            total = total + lambda_d * weighted_ot_loss(pos, w, real, order=2)
    return total


def collocation_points(traj: Trajectory, seed: int, max_points: int | None = None):
    """Trajectory states at every grid node plus as many states paired with uniform random times.

    Returns detached ``(x, t)`` of shapes ``(m, d)`` and ``(m,)``. With
    ``max_points`` the node part is subsampled (without replacement) first.
    """
    S1, N, d = traj.positions.shape
    x_nodes = traj.positions.detach().reshape(S1 * N, d)
    t_nodes = traj.times.repeat_interleave(N)
    rng = np.random.default_rng(seed)
    m = x_nodes.shape[0]
    if max_points is not None and m > max_points // 2:
        keep = torch.as_tensor(np.sort(rng.choice(m, size=max_points // 2, replace=False)))
        x_nodes, t_nodes = x_nodes[keep], t_nodes[keep]
        m = x_nodes.shape[0]
    pick = torch.as_tensor(rng.integers(0, S1 * N, size=m))
    x_rand = traj.positions.detach().reshape(S1 * N, d)[pick]
    lo, hi = float(traj.times[0]), float(traj.times[-1])
    t_rand = torch.as_tensor(rng.uniform(lo, hi, size=m), dtype=DTYPE)
    return torch.cat([x_nodes, x_rand]), torch.cat([t_nodes, t_rand])


def fp_residual(
    v_net: nn.Module,
    g_net: nn.Module | None,
    s_net: nn.Module,
    sigma: SigmaSchedule,
    x: torch.Tensor,
    t: torch.Tensor,
) -> torch.Tensor:
    """Pointwise ``d_t p + div(p v) - g p`` for ``p = exp(2 s / sigma^2)``."""
    if not sigma.value > 0:
        raise ConfigError("the Fokker-Planck residual needs sigma > 0")
    c = 2.0 / sigma.sq()
    x = x.detach().requires_grad_(True)
    t = torch.as_tensor(t, dtype=DTYPE).detach().requires_grad_(True)
    s, grad_s, ds_dt = scalar_grads(s_net, x, t, create_graph=True)
    v, div_v = divergence(v_net, x, t, create_graph=True)
    g = _growth(g_net, x, t)
    p = torch.exp(c * s)
    return p * (c * ds_dt + div_v + c * (grad_s * v).sum(1) - g)


def fp_residual_loss(
    v_net: nn.Module,
    g_net: nn.Module | None,
    s_net: nn.Module,
    sigma: SigmaSchedule,
    x: torch.Tensor,
    t: torch.Tensor,
    p0: Density | None = None,
    lambda_w: float = 0.0,
    x_init=None,
    t_init: float = 0.0,
) -> torch.Tensor:
    """Mean squared PDE residual plus ``lambda_w`` times the mean squared initial mismatch."""
    if x.shape[0] == 0:
        raise UsageError("empty collocation set")
    loss = (fp_residual(v_net, g_net, s_net, sigma, x, t) ** 2).mean()
    if lambda_w and p0 is not None:
        xi = torch.as_tensor(x_init if x_init is not None else p0.centers, dtype=DTYPE)
        p_model = torch.exp(2.0 / sigma.sq() * s_net(xi, t_init).reshape(-1))
        p_ref, _ = density_eval_torch(p0, xi)
        loss = loss + lambda_w * ((p_model - p_ref) ** 2).mean()
    return loss


@dataclass
class BridgePairs:
    """Endpoint pairs of Brownian bridges with their absolute start and end times."""

    x0: torch.Tensor  # (n, d)
    x1: torch.Tensor  # (n, d)
    t0: torch.Tensor  # (n,)
    t1: torch.Tensor  # (n,)

    def __post_init__(self):
        self.x0 = torch.as_tensor(self.x0, dtype=DTYPE)
        self.x1 = torch.as_tensor(self.x1, dtype=DTYPE)
        n = self.x0.shape[0]
        self.t0 = torch.as_tensor(self.t0, dtype=DTYPE).expand(n).clone()
        self.t1 = torch.as_tensor(self.t1, dtype=DTYPE).expand(n).clone()
        if self.x0.shape != self.x1.shape:
            raise ShapeError("bridge endpoints must have equal shapes")
        if not (self.t1 > self.t0).all():
            raise UsageError("bridge end times must exceed start times")

    def __len__(self) -> int:
        return self.x0.shape[0]

    @classmethod
    def concat(cls, parts: list["BridgePairs"]) -> "BridgePairs":
        return cls(
            torch.cat([p.x0 for p in parts]),
            torch.cat([p.x1 for p in parts]),
            torch.cat([p.t0 for p in parts]),
            torch.cat([p.t1 for p in parts]),
        )


CFM_EPS = 1e-3


def bridge_samples(pairs: BridgePairs, sigma: float, n_t: int, gen: torch.Generator, eps: float = CFM_EPS):
    """Draw ``n_t`` bridge points per pair.

    Returns ``(x, t_abs, lam, noise)`` where ``lam`` is the score weighting
    ``2 sqrt(D tau (1 - tau)) / sigma`` for an interval of length ``D``.
    """
    x0 = pairs.x0.repeat(n_t, 1)
    x1 = pairs.x1.repeat(n_t, 1)
    t0 = pairs.t0.repeat(n_t)
    span = (pairs.t1 - pairs.t0).repeat(n_t)
    m = x0.shape[0]
    tau = eps + (1 - 2 * eps) * torch.rand(m, generator=gen, dtype=DTYPE)
    noise = torch.randn(x0.shape, generator=gen, dtype=DTYPE)
    std = torch.sqrt(span * tau * (1 - tau))
    x = tau[:, None] * x1 + (1 - tau)[:, None] * x0 + sigma * std[:, None] * noise
    lam = 2 * std / sigma
    return x, t0 + tau * span, lam, noise


def bridge_score(x, x0, x1, tau, sigma: float, span: float = 1.0):
    """Analytic ``grad log p(x | x0, x1)`` of a Brownian bridge at relative time ``tau``."""
    return (tau * x1 + (1 - tau) * x0 - x) / (sigma**2 * span * tau * (1 - tau))


def cfm_score_loss(
    s_net: nn.Module,
    pairs: BridgePairs,
    sigma: SigmaSchedule,
    n_t: int,
    seed: int,
    stability_alpha: float = 0.0,
) -> torch.Tensor:
    """Conditional flow-matching loss ``E || lam grad s + eps ||^2`` on Brownian bridges.

    With ``stability_alpha > 0`` adds ``stability_alpha * mean(max(s, 0))`` at
    the sampled points to keep the log-density negative.
    """
    if not sigma.value > 0:
        raise ConfigError("score matching needs sigma > 0")
    if len(pairs) == 0:
        raise UsageError("no bridge pairs")
    gen = torch.Generator().manual_seed(int(seed))
    x, t, lam, noise = bridge_samples(pairs, sigma.value, n_t, gen)
    s, grad_s, _ = scalar_grads(s_net, x, t, create_graph=True)
    loss = ((lam[:, None] * grad_s + noise) ** 2).sum(1).mean()
    if stability_alpha > 0:
        loss = loss + stability_alpha * torch.clamp(s, min=0).mean()
    return loss


def total_loss(
    fields: "FieldSet",
    dataset: "SnapshotDataset",
    traj: Trajectory,
    cfg: "TrainConfig",
    p0: Density | None,
    seed: int,
    n0: int | None = None,
    lambda_m: float | None = None,
    lambda_d: float | None = None,
    collocation: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """``L_energy + lambda_r * L_recons + lambda_f * L_fp`` on one integration.

    The Fokker-Planck term is evaluated at ``collocation = (x, t)`` if given,
    else at points drawn from the detached trajectory; either way the points
    are constants for differentiation. Returns the loss and a dict of the
    unweighted component values.
    """
    sigma = SigmaSchedule(cfg.sigma)
    penalty = GrowthPenalty(cfg.penalty, cfg.alpha)
    lambda_m = cfg.lambda_m if lambda_m is None else lambda_m
    lambda_d = cfg.lambda_d if lambda_d is None else lambda_d
    energy = accumulate_action(traj, fields.v, fields.g, fields.s, sigma, penalty.alpha, penalty)
    loss = energy
    parts = {"energy": float(energy.detach())}
    if cfg.lambda_r:
        recon = recon_loss(dataset, traj, lambda_m, lambda_d, n0)
        loss = loss + cfg.lambda_r * recon
        parts["recon"] = float(recon.detach())
    if cfg.lambda_f:
        x, t = collocation if collocation is not None else collocation_points(traj, seed, cfg.collocation_max)
        x_init = dataset.clouds[0]
        fp = fp_residual_loss(
            fields.v, fields.g, fields.s, sigma, x, t, p0, cfg.lambda_w, x_init,
            snapshot_time(dataset, 0),
        )
        loss = loss + cfg.lambda_f * fp
        parts["fp"] = float(fp.detach())
    parts["total"] = float(loss.detach())
    return loss, parts
