"""Snapshot datasets: the synthetic generators and CSV input/output."""

from __future__ import annotations

import io
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError, UsageError


@dataclass
class SnapshotDataset:
    """Unpaired point clouds at consecutive integer time indices."""

    times: list[int]
    clouds: list[np.ndarray]

    def __post_init__(self):
        self.times = [int(t) for t in self.times]
        self.clouds = [np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in self.clouds]
        if len(self.times) != len(self.clouds):
            raise ShapeError(f"{len(self.times)} times but {len(self.clouds)} clouds")
        if not self.clouds:
            raise UsageError("dataset has no snapshots")
        dims = {c.shape[1] for c in self.clouds}
        if len(dims) != 1:
            raise ShapeError(f"snapshots have inconsistent dimensions {sorted(dims)}")
        if any(c.shape[0] == 0 for c in self.clouds):
            raise UsageError("every snapshot needs at least one point")
        if not all(np.isfinite(c).all() for c in self.clouds):
            raise UsageError("dataset contains non-finite coordinates")
        if sorted(self.times) != self.times or len(set(self.times)) != len(self.times):
            raise UsageError(f"snapshot times must be strictly increasing, got {self.times}")

    @property
    def dim(self) -> int:
        return self.clouds[0].shape[1]

    @property
    def counts(self) -> list[int]:
        return [c.shape[0] for c in self.clouds]

    @property
    def relative_mass(self) -> list[float]:
        return [n / self.counts[0] for n in self.counts]

    def project(self, dims) -> "SnapshotDataset":
        dims = list(dims)
        if any(not 0 <= d < self.dim for d in dims):
            raise UsageError(f"projection dims {dims} out of range for dimension {self.dim}")
        return SnapshotDataset(list(self.times), [c[:, dims] for c in self.clouds])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SnapshotDataset):
            return NotImplemented
        return self.times == other.times and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.clouds, other.clouds)
        )


# ---------------------------------------------------------------- gene network


@dataclass
class GrnParams:
    alpha1: float = 0.5
    alpha2: float = 1.0
    alpha3: float = 1.0
    gamma1: float = 0.5
    gamma2: float = 1.0
    gamma3: float = 10.0
    delta1: float = 0.4
    delta2: float = 0.4
    delta3: float = 0.4
    eta1: float = 0.05
    eta2: float = 0.05
    eta3: float = 0.01
    eta_d: float = 0.014
    beta: float = 1.0
    alpha_g: float = 2.0  # percent; division probability scale per unit time
    dt: float = 1.0
    record_times: list[float] = field(default_factory=lambda: [0.0, 8.0, 16.0, 24.0, 32.0])
    centers: list[list[float]] = field(default_factory=lambda: [[2.0, 0.2, 0.0], [0.0, 0.0, 2.0]])
    init_var: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if self.alpha_g < 0:
            raise UsageError(f"alpha_g must be nonnegative, got {self.alpha_g}")
        if sorted(self.record_times) != list(self.record_times) or not self.record_times:
            raise UsageError("record_times must be a nonempty increasing list")


def grn_drift(X: np.ndarray, p: GrnParams) -> np.ndarray:
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    f1 = (p.alpha1 * x1**2 + p.beta) / (
        1 + p.alpha1 * x1**2 + p.gamma2 * x2**2 + p.gamma3 * x3**2 + p.beta
    ) - p.delta1 * x1
    f2 = (p.alpha2 * x2**2 + p.beta) / (
        1 + p.gamma1 * x1**2 + p.alpha2 * x2**2 + p.gamma3 * x3**2 + p.beta
    ) - p.delta2 * x2
    f3 = p.alpha3 * x3**2 / (1 + p.alpha3 * x3**2) - p.delta3 * x3
    return np.stack([f1, f2, f3], axis=1)


def grn_division_rate(X: np.ndarray, p: GrnParams) -> np.ndarray:
    """Division probability per unit time, ``alpha_g X2^2 / (1 + X2^2)`` percent."""
    x2 = X[:, 1]
    return p.alpha_g * x2**2 / (1 + x2**2) / 100.0


@dataclass
class GrnResult:
    dataset: SnapshotDataset
    division_rate: list[np.ndarray]  # ground-truth per-cell rate at each snapshot
    divided: list[np.ndarray]  # whether the cell was born in the step before the snapshot


def simulate_grn(params: GrnParams | None = None, n0_per_cluster: int = 250, seed: int = 0) -> GrnResult:
    """Euler-Maruyama simulation of the three-gene toggle switch with cell division.

    After every step each cell divides with probability ``rate * dt``; both
    daughters take the parent's state plus independent ``eta_d N(0, 1)``
    perturbations. Negative expression is clipped to zero. Snapshots are
    re-indexed ``0..len(record_times)-1``.
    """
    p = params or GrnParams()
    if n0_per_cluster < 1:
        raise UsageError("n0_per_cluster must be at least 1")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(p.init_var)
    X = np.concatenate(
        [np.asarray(c, dtype=np.float64) + sd * rng.standard_normal((n0_per_cluster, 3)) for c in p.centers]
    )
    X = np.maximum(X, 0.0)
    born = np.zeros(X.shape[0], dtype=bool)
    eta = np.array([p.eta1, p.eta2, p.eta3])
    n_steps = int(round(p.record_times[-1] / p.dt))
    record_steps = {int(round(t / p.dt)): k for k, t in enumerate(p.record_times)}

    clouds, rates, divided = [], [], []

    def record():
        clouds.append(X.copy())
        rates.append(grn_division_rate(X, p))
        divided.append(born.copy())

    if 0 in record_steps:
        record()
    for step in range(1, n_steps + 1):
        X = X + grn_drift(X, p) * p.dt + eta * math.sqrt(p.dt) * rng.standard_normal(X.shape)
        X = np.maximum(X, 0.0)
        prob = np.clip(grn_division_rate(X, p) * p.dt, 0.0, 1.0)
        split = rng.random(X.shape[0]) < prob
        if split.any():
            parents = X[split]
            d1 = np.maximum(parents + p.eta_d * rng.standard_normal(parents.shape), 0.0)
            d2 = np.maximum(parents + p.eta_d * rng.standard_normal(parents.shape), 0.0)
            X = np.concatenate([X[~split], d1, d2])
            born = np.concatenate([np.zeros((~split).sum(), bool), np.ones(2 * len(parents), bool)])
        else:
            born = np.zeros(X.shape[0], dtype=bool)
        if step in record_steps:
            record()
    dataset = SnapshotDataset(list(range(len(clouds))), clouds)
    return GrnResult(dataset, rates, divided)


# ------------------------------------------------------------ gaussian mixture


@dataclass
class GaussMixtureParams:
    """Component centers live in the ``(x1, x2)`` plane; other coordinates are centred noise."""

    initial_centers: list[list[float]] = field(default_factory=lambda: [[0.0, -1.0], [0.0, 1.5]])
    initial_counts: list[int] = field(default_factory=lambda: [400, 100])
    final_centers: list[list[float]] = field(
        default_factory=lambda: [[0.0, 1.5], [-1.5, -1.5], [1.5, -1.5]]
    )
    final_counts: list[int] = field(default_factory=lambda: [1000, 200, 200])
    component_std: float = 0.2
    noise_std: float = 0.05


def simulate_gaussian_mixture(dim: int = 10, seed: int = 0, params: GaussMixtureParams | None = None) -> SnapshotDataset:
    """Two snapshots: 400 + 100 initial points, 1000 + 200 + 200 final points.

    The upper component grows in place while the lower one splits in two.
    """
    if dim < 2:
        raise UsageError(f"dim must be at least 2, got {dim}")
    p = params or GaussMixtureParams()
    rng = np.random.default_rng(seed)

    def draw(centers, counts):
        parts = []
        for c, n in zip(centers, counts):
            pts = np.empty((n, dim))
            pts[:, :2] = np.asarray(c, dtype=np.float64) + p.component_std * rng.standard_normal((n, 2))
            pts[:, 2:] = p.noise_std * rng.standard_normal((n, dim - 2))
            parts.append(pts)
        return np.concatenate(parts)

    return SnapshotDataset(
        [0, 1],
        [draw(p.initial_centers, p.initial_counts), draw(p.final_centers, p.final_counts)],
    )


# ------------------------------------------------------------------------ csv


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(dataset: SnapshotDataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(["time"] + [f"x{i}" for i in range(dataset.dim)]) + "\n")
    for t, cloud in zip(dataset.times, dataset.clouds):
        for row in cloud:
            buf.write(str(t) + "," + ",".join(format(v, ".17g") for v in row) + "\n")
    return buf.getvalue()


def save_csv(dataset: SnapshotDataset, path) -> None:
    atomic_write_text(path, dataset_to_csv(dataset))


def load_csv(path) -> SnapshotDataset:
    """Read ``time,x0,...,x{d-1}`` rows; errors cite the 1-based line number."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise ParseError("missing header", 1)
    header = [h.strip() for h in lines[0].split(",")]
    if header[0] != "time":
        raise ParseError(f"first column must be 'time', got {header[0]!r}", 1)
    d = len(header) - 1
    if d < 1:
        raise ParseError("no coordinate columns", 1)
    for i, name in enumerate(header[1:]):
        if name != f"x{i}":
            raise ParseError(f"unknown column {name!r} (expected 'x{i}')", 1)
    groups: dict[int, list[list[float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != d + 1:
            raise ParseError(f"expected {d + 1} fields, got {len(fields)}", lineno)
        try:
            t = int(fields[0])
        except ValueError:
            raise ParseError(f"time {fields[0]!r} is not an integer index", lineno) from None
        try:
            row = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric coordinate ({exc})", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError("non-finite coordinate", lineno)
        groups.setdefault(t, []).append(row)
    if not groups:
        raise ParseError("no data rows", len(lines))
    times = sorted(groups)
    return SnapshotDataset(times, [np.asarray(groups[t], dtype=np.float64) for t in times])
