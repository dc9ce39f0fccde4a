"""Push-forward evaluation and potential-landscape export."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .dynamics import SigmaSchedule, TimeGrid, integrate, sample_sde
from .errors import UsageError
from .nets import DTYPE, FieldSet
from .synthdata import SnapshotDataset, atomic_write_text
from .transport import WeightedCloud, wasserstein

MODES = ("all", "matched")
DYNAMICS = ("ode", "sde")


@dataclass
class MetricsTable:
    times: list[int]
    w1: np.ndarray  # (repeats, n_times)
    w2: np.ndarray
    seeds: list[int]

    @property
    def repeats(self) -> int:
        return self.w1.shape[0]

    def summary(self) -> list[tuple[int, str, float, float]]:
        rows = []
        for j, t in enumerate(self.times):
            for name, arr in (("W1", self.w1), ("W2", self.w2)):
                rows.append((t, name, float(arr[:, j].mean()), float(arr[:, j].std())))
        return rows

    def mean(self, metric: str = "W1") -> np.ndarray:
        return (self.w1 if metric == "W1" else self.w2).mean(axis=0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,metric,mean,std\n")
        for t, name, m, s in self.summary():
            buf.write(f"{t},{name},{m:.17g},{s:.17g}\n")
        return buf.getvalue()

    def format_table(self) -> str:
        lines = [f"{'t':>4} {'W1':>18} {'W2':>18}"]
        for j, t in enumerate(self.times):
            lines.append(
                f"{t:>4} {self.w1[:, j].mean():>10.4f} ± {self.w1[:, j].std():<5.3f} "
                f"{self.w2[:, j].mean():>10.4f} ± {self.w2[:, j].std():<5.3f}"
            )
        return "\n".join(lines)


def predict_snapshots(
    fields: FieldSet,
    data: SnapshotDataset,
    sigma: float,
    steps_per_unit: int,
    dynamics: str,
    seed: int,
    eval_sigma: float | None = None,
) -> list[WeightedCloud]:
    """Predicted weighted clouds at every snapshot time, starting from all initial points.

    Weights always come from the deterministic weight ODE; with ``dynamics="sde"``
    positions come from SDE paths started at the same points, with noise level
    ``eval_sigma`` (default: the training ``sigma``).
    """
    if dynamics not in DYNAMICS:
        raise UsageError(f"dynamics must be one of {DYNAMICS}")
    t0, t1 = data.times[0], data.times[-1]
    grid = TimeGrid(float(t0), float(t1), (t1 - t0) * steps_per_unit)
    x0 = torch.as_tensor(data.clouds[0], dtype=DTYPE)
    with torch.no_grad():
        ode = integrate(fields.v, fields.g, x0, grid)
    pos = ode.positions
    noise = sigma if eval_sigma is None else eval_sigma
    if dynamics == "sde" and noise > 0 and sigma > 0:
        pos = sample_sde(fields.v, fields.s, SigmaSchedule(noise), x0, grid, seed, train_sigma=sigma).positions
    out = []
    for t in data.times:
        j = ode.index_of(float(t))
        out.append(WeightedCloud(pos[j].detach().numpy(), ode.weights_at(j).detach().numpy()))
    return out


def compare(pred: WeightedCloud, real: np.ndarray, mode: str, rng: np.random.Generator) -> tuple[float, float]:
    """W1 and W2 between a weighted prediction and uniform data.

    ``mode="matched"`` first resamples as many predicted points as there are
    data points, proportionally to the weights, and compares uniform clouds.
    """
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}")
    if mode == "matched":
        idx = rng.choice(len(pred), size=real.shape[0], replace=True, p=pred.weights)
        pred = WeightedCloud.uniform(pred.points[idx])
    target = WeightedCloud.uniform(real)
    return wasserstein(pred, target, 1)[0], wasserstein(pred, target, 2)[0]


def evaluate_model(
    fields: FieldSet,
    data: SnapshotDataset,
    sigma: float,
    steps_per_unit: int = 20,
    repeats: int = 5,
    mode: str = "all",
    dynamics: str = "sde",
    seed: int = 0,
    eval_sigma: float | None = None,
) -> MetricsTable:
    """W1/W2 between predictions and data at every snapshot ``k >= 1``, over ``repeats`` seeds.

    ``sigma`` is the noise level the model was trained with; ``eval_sigma``
    optionally samples paths at another level (see ``sample_sde``).
    """
    if len(data.times) < 2:
        raise UsageError("evaluation needs at least two snapshot times")
    if repeats < 1:
        raise UsageError("repeats must be at least 1")
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(repeats)]
    w1 = np.zeros((repeats, len(data.times) - 1))
    w2 = np.zeros_like(w1)
    for r, s in enumerate(seeds):
        preds = predict_snapshots(fields, data, sigma, steps_per_unit, dynamics, s, eval_sigma)
        rng = np.random.default_rng(s)
        for k in range(1, len(data.times)):
            w1[r, k - 1], w2[r, k - 1] = compare(preds[k], data.clouds[k], mode, rng)
    return MetricsTable(list(data.times[1:]), w1, w2, seeds)


def evaluate_identity(data: SnapshotDataset, repeats: int = 1) -> MetricsTable:
    """Metrics of the model that reproduces every snapshot exactly (all zeros)."""
    n = len(data.times) - 1
    w1 = np.zeros((repeats, n))
    w2 = np.zeros((repeats, n))
    for k in range(1, len(data.times)):
        c = WeightedCloud.uniform(data.clouds[k])
        w1[:, k - 1] = wasserstein(c, c, 1)[0]
        w2[:, k - 1] = wasserstein(c, c, 2)[0]
    return MetricsTable(list(data.times[1:]), w1, w2, list(range(repeats)))


@dataclass
class LandscapeGrid:
    axes: list[np.ndarray]  # node coordinates per exported axis
    values: np.ndarray  # shape = resolution, U = -s at each node
    t: float
    bounds: list[tuple[float, float]]
    resolution: list[int]
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.metadata()) + "\n")
        if len(self.axes) == 1:
            buf.write("x0,U\n")
            for x, u in zip(self.axes[0], self.values):
                buf.write(f"{x:.17g},{u:.17g}\n")
        else:
            buf.write("x0,x1,U\n")
            for i, x in enumerate(self.axes[0]):
                for j, y in enumerate(self.axes[1]):
                    buf.write(f"{x:.17g},{y:.17g},{self.values[i, j]:.17g}\n")
        return buf.getvalue()

    def metadata(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "resolution": self.resolution, "t": self.t, **self.meta}


def landscape_grid(
    s_net: nn.Module,
    bounds,
    resolution,
    t: float,
    axes: tuple[int, ...] | None = None,
    base_point=None,
    sigma: float | None = None,
) -> LandscapeGrid:
    """``U = -s(x, t)`` on a tensor grid over one or two state coordinates.

    For states of higher dimension ``axes`` picks the exported coordinates and
    the remaining ones are held at ``base_point`` (zeros by default).
    """
    bounds = [tuple(map(float, b)) for b in bounds]
    resolution = [int(r) for r in resolution]
    if len(bounds) not in (1, 2) or len(bounds) != len(resolution):
        raise UsageError("landscape needs matching bounds and resolution for 1 or 2 axes")
    if any(r < 2 for r in resolution):
        raise UsageError("resolution must be at least 2 per axis")
    if any(not hi > lo for lo, hi in bounds):
        raise UsageError(f"bounds must be increasing, got {bounds}")
    dim = s_net.spec.state_dim if hasattr(s_net, "spec") else len(bounds)
    axes = tuple(range(len(bounds))) if axes is None else tuple(axes)
    if len(axes) != len(bounds) or any(not 0 <= a < dim for a in axes):
        raise UsageError(f"axes {axes} invalid for a {dim}-dimensional state")
    base = np.zeros(dim) if base_point is None else np.asarray(base_point, dtype=np.float64)
    nodes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, resolution)]
    mesh = np.meshgrid(*nodes, indexing="ij")
    pts = np.tile(base, (mesh[0].size, 1))
    for a, m in zip(axes, mesh):
        pts[:, a] = m.ravel()
    with torch.no_grad():
        s = s_net(torch.as_tensor(pts, dtype=DTYPE), float(t)).reshape(-1).numpy()
    meta = {"axes": list(axes)}
    if sigma is not None:
        meta["sigma"] = sigma
    return LandscapeGrid(nodes, (-s).reshape(resolution), float(t), bounds, resolution, meta)


def save_text(path, text: str) -> None:
    atomic_write_text(path, text)
