"""Independent reference computations used by the tests.

Nothing here imports the package under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq


def _tree_flow(a, b, edges):
    """Unique flow on a spanning tree of K_{n,m} with marginals a, b (leaf peeling).

    Returns None if the edge set contains a cycle (not a tree).
    """
    n, m = len(a), len(b)
    supply = np.concatenate([np.asarray(a, float), np.asarray(b, float)])
    adj = {k: set() for k in range(n + m)}
    for i, j in edges:
        adj[i].add(n + j)
        adj[n + j].add(i)
    flow = {}
    remaining = set(edges)
    live = set(range(n + m))
    while remaining:
        leaf = next((k for k in live if len(adj[k]) == 1), None)
        if leaf is None:
            return None
        (other,) = adj[leaf]
        amount = supply[leaf]
        supply[other] -= amount
        supply[leaf] = 0.0
        e = (leaf, other - n) if leaf < n else (other, leaf - n)
        flow[e] = amount
        remaining.discard(e)
        adj[other].discard(leaf)
        adj[leaf].clear()
        live.discard(leaf)
    return flow


def transport_vertices(a, b, tol=1e-12):
    """All vertices of the transportation polytope U(a, b), as dense matrices.

    Each basic feasible solution is the flow on a spanning tree of the
    complete bipartite graph; trees with a negative flow are infeasible.
    """
    n, m = len(a), len(b)
    cells = [(i, j) for i in range(n) for j in range(m)]
    verts = []
    for edges in itertools.combinations(cells, n + m - 1):
        flow = _tree_flow(a, b, edges)
        if flow is None or min(flow.values()) < -tol:
            continue
        P = np.zeros((n, m))
        for (i, j), f in flow.items():
            P[i, j] = max(f, 0.0)
        verts.append(P)
    return verts


def ot_by_enumeration(x, a, y, b, order):
    """Exact W_order by minimizing the linear cost over every polytope vertex."""
    diff = x[:, None, :] - y[None, :, :]
    C = np.sqrt((diff**2).sum(-1))
    if order == 2:
        C = C**2
    best = min(float((P * C).sum()) for P in transport_vertices(a, b))
    return best if order == 1 else math.sqrt(max(best, 0.0))


def symmetric_penalty_by_sup(g: float) -> float:
    """sup_s [g s - (cosh s - 1)] by root-finding the stationarity condition sinh s = g."""
    if g == 0:
        return 0.0
    lo, hi = -50.0, 50.0
    s = brentq(lambda s: math.sinh(s) - g, lo, hi, xtol=1e-15, rtol=1e-15)
    return g * s - (math.cosh(s) - 1)


def gaussian_kde_direct(x, centers, bandwidth, normalization="per_point_average"):
    """Plain loop over centres, no log-sum-exp."""
    x = np.atleast_2d(x)
    d = centers.shape[1]
    norm = (2 * math.pi * bandwidth**2) ** (-d / 2)
    out = np.zeros(x.shape[0])
    for c in centers:
        out += norm * np.exp(-((x - c) ** 2).sum(1) / (2 * bandwidth**2))
    return out / len(centers) if normalization == "per_point_average" else out


def central_difference(f, theta, eps=1e-6):
    """Gradient of scalar f at a flat float64 vector by central differences."""
    g = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        g[k] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return g
