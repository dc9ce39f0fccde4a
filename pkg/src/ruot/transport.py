"""Exact discrete optimal transport between weighted point clouds."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# POT probes every installed array backend at import; only numpy is used here.
for _key in ("POT_BACKEND_DISABLE_TENSORFLOW", "POT_BACKEND_DISABLE_JAX", "POT_BACKEND_DISABLE_CUPY"):
    os.environ.setdefault(_key, "1")

import ot  # noqa: E402

from .errors import NumericError, ShapeError, UsageError  # noqa: E402

DROP_TOL = 1e-12
MAX_ITER = 10_000_000


@dataclass
class WeightedCloud:
    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.points.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"{self.points.shape[0]} points but {self.weights.shape[0]} weights"
            )
        if self.points.shape[0] == 0:
            raise UsageError("empty point cloud")
        if (self.weights < 0).any() or not np.isfinite(self.weights).all():
            raise UsageError("weights must be finite and nonnegative")
        total = self.weights.sum()
        if total <= 0:
            raise UsageError("weights sum to zero")
        self.weights = self.weights / total

    @classmethod
    def uniform(cls, points) -> "WeightedCloud":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(points, np.full(points.shape[0], 1.0 / max(points.shape[0], 1)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class TransportPlan:
    coupling: np.ndarray  # (n, m)
    cost: float


def cost_matrix(x: np.ndarray, y: np.ndarray, order: int) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if order == 2:
        return sq
    if order == 1:
        return np.sqrt(sq)
    raise UsageError(f"order must be 1 or 2, got {order}")


def solve_ot(a: np.ndarray, b: np.ndarray, C: np.ndarray):
    """Exact OT between histograms ``a`` and ``b`` (each summing to one).

    Entries below ``DROP_TOL`` are removed before the network simplex runs and
    reinserted as empty rows/columns. Returns ``(coupling, u, v)`` where
    ``u, v`` are dual potentials valid on the full index sets (dropped rows
    and columns get their c-transform).
    """
    ia = np.flatnonzero(a > DROP_TOL)
    ib = np.flatnonzero(b > DROP_TOL)
    aa = a[ia] / a[ia].sum()
    bb = b[ib] / b[ib].sum()
    Csub = np.ascontiguousarray(C[np.ix_(ia, ib)])
    G, log = ot.emd(aa, bb, Csub, numItermax=MAX_ITER, log=True)
    if log.get("warning"):
        raise NumericError(f"network simplex did not converge: {log['warning']}")
    coupling = np.zeros_like(C)
    coupling[np.ix_(ia, ib)] = G
    u = np.empty(C.shape[0])
    v = np.empty(C.shape[1])
    v[ib] = log["v"]
    u[ia] = log["u"]
    if len(ib) < C.shape[1]:
        rest = np.setdiff1d(np.arange(C.shape[1]), ib)
        v[rest] = (C[np.ix_(ia, rest)] - u[ia, None]).min(axis=0)
    if len(ia) < C.shape[0]:
        rest = np.setdiff1d(np.arange(C.shape[0]), ia)
        u[rest] = (C[rest] - v[None, :]).min(axis=1)
    return coupling, u, v


def wasserstein(p: WeightedCloud, q: WeightedCloud, order: int = 2):
    """Exact ``W_order`` distance and its optimal plan.

    The plan's ``cost`` is the LP value (for order 2 the squared distance).
    """
    if p.dim != q.dim:
        raise ShapeError(f"dimension mismatch: {p.dim} vs {q.dim}")
    C = cost_matrix(p.points, q.points, order)
    coupling, _, _ = solve_ot(p.weights, q.weights, C)
    cost = float((coupling * C).sum())
    cost = max(cost, 0.0)
    distance = cost if order == 1 else float(np.sqrt(cost))
    return distance, TransportPlan(coupling, cost)


def sample_pairs(
    plan: TransportPlan,
    source: WeightedCloud,
    target: WeightedCloud,
    n: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` i.i.d. index pairs with probability proportional to the coupling."""
    P = np.asarray(plan.coupling, dtype=np.float64)
    if P.shape != (len(source), len(target)):
        raise ShapeError(f"plan shape {P.shape} does not match clouds ({len(source)}, {len(target)})")
    total = P.sum()
    if not total > 0:
        raise UsageError("transport plan has no mass")
    rng = np.random.default_rng(seed)
    flat = rng.choice(P.size, size=n, p=(P / total).ravel())
    i, j = np.unravel_index(flat, P.shape)
    return source.points[i], target.points[j]
