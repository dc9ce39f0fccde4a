"""Isotropic Gaussian mixture estimate of the initial density."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ShapeError, UsageError
from .nets import DTYPE

NORMALIZATIONS = ("per_point_average", "unnormalized_sum")


@dataclass(frozen=True)
class Density:
    centers: np.ndarray  # (n, d)
    bandwidth: float
    normalization: str = "per_point_average"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
        if len(self.centers) == 0:
            raise UsageError("density needs at least one center")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def fit_kde(points, bandwidth: float, normalization: str = "per_point_average") -> Density:
    """One Gaussian of covariance ``bandwidth^2 I`` per data point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 0:
        raise UsageError("cannot fit a density to zero points")
    return Density(pts.copy(), float(bandwidth), normalization)


def density_eval_torch(den: Density, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched ``(pdf, log_pdf)`` at rows of ``x``; log-sum-exp over centers."""
    x = torch.as_tensor(x, dtype=DTYPE)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.shape[1] != den.dim:
        raise ShapeError(f"query dimension {x.shape[1]} != density dimension {den.dim}")
    c = torch.as_tensor(den.centers, dtype=DTYPE)
    d = den.dim
    h2 = den.bandwidth**2
    sq = ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    log_norm = -0.5 * d * math.log(2 * math.pi * h2)
    if den.normalization == "per_point_average":
        log_norm -= math.log(c.shape[0])
    log_pdf = torch.logsumexp(-0.5 * sq / h2, dim=1) + log_norm
    return torch.exp(log_pdf), log_pdf


def density_eval(den: Density, x) -> tuple[float, float] | tuple[np.ndarray, np.ndarray]:
    """``(pdf, log_pdf)`` at a single state, or arrays for a batch of states."""
    arr = np.asarray(x, dtype=np.float64)
    pdf, log_pdf = density_eval_torch(den, torch.as_tensor(arr))
    if arr.ndim == 1:
        return float(pdf[0]), float(log_pdf[0])
    return pdf.numpy(), log_pdf.numpy()
